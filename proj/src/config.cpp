#include "orchard/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <sstream>

#include "orchard/error.hpp"

namespace orchard {

namespace {

using Json = nlohmann::json;

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double d = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::input_error,
                "config: value of '" + key + "' is not a number: " + value);
  }
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::int64_t out = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw Error(ErrorCode::input_error,
                "config: value of '" + key + "' is not an integer: " + value);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw Error(ErrorCode::input_error,
              "config: value of '" + key + "' is not a boolean: " + value);
}

void require(bool ok, const std::string& key, const std::string& constraint) {
  if (!ok) {
    throw Error(ErrorCode::input_error,
                "config: '" + key + "' out of range (" + constraint + ")");
  }
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
  if (key == "seed") {
    const auto v = parse_int(key, value);
    require(v >= 0, key, ">= 0");
    seed = static_cast<std::uint64_t>(v);
  } else if (key == "threads") {
    const auto v = parse_int(key, value);
    require(v >= 0 && v <= 1024, key, "0..1024");
    threads = static_cast<int>(v);
  } else if (key == "huber_delta_px") {
    huber_delta_px = parse_double(key, value);
    require(huber_delta_px > 0, key, "> 0");
  } else if (key == "huber_delta_3d") {
    huber_delta_3d = parse_double(key, value);
    require(huber_delta_3d > 0, key, "> 0");
  } else if (key == "huber_delta_ei") {
    huber_delta_ei = parse_double(key, value);
    require(huber_delta_ei > 0, key, "> 0");
  } else if (key == "lambda") {
    lambda = parse_double(key, value);
    require(lambda >= 0, key, ">= 0");
  } else if (key == "lambda_s") {
    lambda_s = parse_double(key, value);
    require(lambda_s >= 0, key, ">= 0");
  } else if (key == "lambda_s_per_object") {
    lambda_s_per_object = parse_bool(key, value);
  } else if (key == "ei_normalized") {
    ei_normalized = parse_bool(key, value);
  } else if (key == "theta_max_deg") {
    theta_max_deg = parse_double(key, value);
    require(theta_max_deg > 0 && theta_max_deg <= 90, key, "(0, 90]");
  } else if (key == "ground_t_s") {
    ground_t_s = parse_double(key, value);
    require(ground_t_s > 0, key, "> 0");
  } else if (key == "ground_boundary_eps") {
    ground_boundary_eps = parse_double(key, value);
    require(ground_boundary_eps >= 0 && ground_boundary_eps <= 1, key, "[0, 1]");
  } else if (key == "ransac_max_iters") {
    ransac_max_iters = static_cast<int>(parse_int(key, value));
    require(ransac_max_iters > 0, key, "> 0");
  } else if (key == "cylinder_inlier_threshold") {
    cylinder_inlier_threshold = parse_double(key, value);
    require(cylinder_inlier_threshold > 0, key, "> 0");
  } else if (key == "pairwise_inlier_threshold") {
    pairwise_inlier_threshold = parse_double(key, value);
    require(pairwise_inlier_threshold > 0, key, "> 0");
  } else if (key == "max_trunk_radius") {
    max_trunk_radius = parse_double(key, value);
    require(max_trunk_radius > 0, key, "> 0");
  } else if (key == "min_loop_inliers") {
    min_loop_inliers = static_cast<int>(parse_int(key, value));
    require(min_loop_inliers > 0, key, "> 0");
  } else if (key == "local_ba_min_shared") {
    local_ba_min_shared = static_cast<int>(parse_int(key, value));
    require(local_ba_min_shared > 0, key, "> 0");
  } else if (key == "local_ba_max_window") {
    local_ba_max_window = static_cast<int>(parse_int(key, value));
    require(local_ba_max_window >= 2, key, ">= 2");
  } else if (key == "local_ba_stride") {
    local_ba_stride = static_cast<int>(parse_int(key, value));
    require(local_ba_stride >= 1, key, ">= 1");
  } else if (key == "pairwise_ba_iterations") {
    pairwise_ba_iterations = static_cast<int>(parse_int(key, value));
    require(pairwise_ba_iterations >= 0, key, ">= 0");
  } else if (key == "local_ba_iterations") {
    local_ba_iterations = static_cast<int>(parse_int(key, value));
    require(local_ba_iterations >= 0, key, ">= 0");
  } else if (key == "global_ba_iterations") {
    global_ba_iterations = static_cast<int>(parse_int(key, value));
    require(global_ba_iterations >= 0, key, ">= 0");
  } else if (key == "use_loops") {
    use_loops = parse_bool(key, value);
  } else if (key == "sba_iterations") {
    sba_iterations = static_cast<int>(parse_int(key, value));
    require(sba_iterations >= 0, key, ">= 0");
  } else if (key == "alpha_m") {
    alpha_m = parse_double(key, value);
    require(alpha_m > 0, key, "> 0");
  } else if (key == "min_component_fraction") {
    min_component_fraction = parse_double(key, value);
    require(min_component_fraction >= 0 && min_component_fraction < 1, key,
            "[0, 1)");
  } else if (key == "slice_h0") {
    slice_h0 = parse_double(key, value);
    require(slice_h0 >= 0, key, ">= 0");
  } else if (key == "slice_dh") {
    slice_dh = parse_double(key, value);
    require(slice_dh > 0, key, "> 0");
  } else if (key == "pole_exclusion") {
    pole_exclusion = parse_bool(key, value);
  } else if (key == "pole_radius") {
    pole_radius = parse_double(key, value);
    require(pole_radius > 0, key, "> 0");
  } else if (key == "row_margin") {
    row_margin = parse_double(key, value);
    require(row_margin > 0, key, "> 0");
  } else if (key == "segment_bin") {
    segment_bin = parse_double(key, value);
    require(segment_bin > 0, key, "> 0");
  } else if (key == "max_triangulation_points") {
    max_triangulation_points = static_cast<int>(parse_int(key, value));
    require(max_triangulation_points >= 4, key, ">= 4");
  } else {
    throw Error(ErrorCode::input_error, "config: unknown key '" + key + "'");
  }
}

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::input_error,
                std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw Error(ErrorCode::input_error, "config: expected a JSON object");
  }
  PipelineConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "schema") continue;
    std::string s;
    if (value.is_string()) {
      s = value.get<std::string>();
    } else if (value.is_boolean()) {
      s = value.get<bool>() ? "true" : "false";
    } else {
      std::ostringstream os;
      os << value;
      s = os.str();
    }
    cfg.set(key, s);
  }
  return cfg;
}

PipelineConfig PipelineConfig::from_key_value_text(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::input_error,
                  "config: line " + std::to_string(line_no) +
                      " is not key=value");
    }
    cfg.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::input_error, "config: cannot open " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    return from_json_text(text);
  }
  return from_key_value_text(text);
}

std::string PipelineConfig::to_json_text() const {
  Json doc;
  doc["schema"] = "orchard/config@1";
  doc["seed"] = seed;
  doc["threads"] = threads;
  doc["huber_delta_px"] = huber_delta_px;
  doc["huber_delta_3d"] = huber_delta_3d;
  doc["huber_delta_ei"] = huber_delta_ei;
  doc["lambda"] = lambda;
  doc["lambda_s"] = lambda_s;
  doc["lambda_s_per_object"] = lambda_s_per_object;
  doc["ei_normalized"] = ei_normalized;
  doc["theta_max_deg"] = theta_max_deg;
  doc["ground_t_s"] = ground_t_s;
  doc["ground_boundary_eps"] = ground_boundary_eps;
  doc["ransac_max_iters"] = ransac_max_iters;
  doc["cylinder_inlier_threshold"] = cylinder_inlier_threshold;
  doc["pairwise_inlier_threshold"] = pairwise_inlier_threshold;
  doc["max_trunk_radius"] = max_trunk_radius;
  doc["min_loop_inliers"] = min_loop_inliers;
  doc["local_ba_min_shared"] = local_ba_min_shared;
  doc["local_ba_max_window"] = local_ba_max_window;
  doc["local_ba_stride"] = local_ba_stride;
  doc["pairwise_ba_iterations"] = pairwise_ba_iterations;
  doc["local_ba_iterations"] = local_ba_iterations;
  doc["global_ba_iterations"] = global_ba_iterations;
  doc["use_loops"] = use_loops;
  doc["sba_iterations"] = sba_iterations;
  doc["alpha_m"] = alpha_m;
  doc["min_component_fraction"] = min_component_fraction;
  doc["slice_h0"] = slice_h0;
  doc["slice_dh"] = slice_dh;
  doc["pole_exclusion"] = pole_exclusion;
  doc["pole_radius"] = pole_radius;
  doc["row_margin"] = row_margin;
  doc["segment_bin"] = segment_bin;
  doc["max_triangulation_points"] = max_triangulation_points;
  return doc.dump(2) + "\n";
}

}  // namespace orchard
