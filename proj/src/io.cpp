#include "orchard/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace orchard::io {

namespace {

using Json = nlohmann::json;

void require_schema(const Json& doc, const std::string& want,
                    const std::string& path) {
  if (!doc.is_object() || doc.value("schema", "") != want) {
    throw Error(ErrorCode::input_error,
                path + ": expected schema '" + want + "'");
  }
}

Json load_json(const std::string& path) {
  try {
    return Json::parse(slurp(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::input_error,
                path + ": invalid JSON: " + e.what());
  }
}

void dump(const std::string& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::input_error, "cannot write " + path);
  }
  out << doc.dump() << "\n";
}

Json vec3(const Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vector3d to_vec3(const Json& j) {
  return Vector3d(j.at(0).get<double>(), j.at(1).get<double>(),
                  j.at(2).get<double>());
}

Json transform_json(const RigidTransform& t) {
  Json r = Json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(t.rotation(i, j));
  return Json{{"r", r}, {"t", vec3(t.translation)}};
}

RigidTransform to_transform(const Json& j) {
  RigidTransform t;
  const auto& r = j.at("r");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) t.rotation(i, k) = r.at(3 * i + k).get<double>();
  t.translation = to_vec3(j.at("t"));
  return t;
}

}  // namespace

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::input_error, "cannot open " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_ply(const std::string& path, const std::vector<Vector3d>& points) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) {
    throw Error(ErrorCode::input_error, "cannot write " + path);
  }
  std::fprintf(f,
               "ply\nformat ascii 1.0\nelement vertex %zu\n"
               "property double x\nproperty double y\nproperty double z\n"
               "end_header\n",
               points.size());
  for (const auto& p : points) {
    std::fprintf(f, "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
  }
  std::fclose(f);
}

std::vector<Vector3d> read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::input_error, "cannot open " + path);
  }
  std::string line;
  std::getline(in, line);
  if (line != "ply") {
    throw Error(ErrorCode::input_error, path + ": not an ascii PLY file");
  }
  size_t count = 0;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) {
      count = std::stoul(line.substr(15));
    }
    if (line == "end_header") break;
  }
  std::vector<Vector3d> points;
  points.reserve(count);
  for (size_t i = 0; i < count && std::getline(in, line); ++i) {
    std::istringstream ls(line);
    Vector3d p;
    if (!(ls >> p.x() >> p.y() >> p.z())) {
      throw Error(ErrorCode::input_error, path + ": malformed vertex line");
    }
    points.push_back(p);
  }
  if (points.size() != count) {
    throw Error(ErrorCode::input_error, path + ": truncated vertex list");
  }
  return points;
}

void write_trajectory(const std::string& path,
                      const std::vector<RigidTransform>& cam_to_world) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) {
    throw Error(ErrorCode::input_error, "cannot write " + path);
  }
  for (size_t i = 0; i < cam_to_world.size(); ++i) {
    const auto q = to_quaternion(cam_to_world[i].rotation);
    const auto& t = cam_to_world[i].translation;
    std::fprintf(f, "%zu %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", i,
                 t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
  }
  std::fclose(f);
}

std::vector<RigidTransform> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::input_error, "cannot open " + path);
  }
  std::vector<RigidTransform> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    long id;
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> id >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorCode::input_error, path + ": malformed pose line");
    }
    RigidTransform t;
    t.rotation = from_quaternion(qx, qy, qz, qw);
    t.translation = Vector3d(tx, ty, tz);
    out.push_back(t);
  }
  return out;
}

namespace {

Json intrinsics_json(const Intrinsics& k) {
  return Json::array({k.fx, k.fy, k.cx, k.cy});
}

Intrinsics to_intrinsics(const Json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>()};
}

}  // namespace

void write_tracks(const std::string& path, const SideInput& input) {
  Json doc;
  doc["schema"] = "orchard/tracks@1";
  doc["side"] = side_name(input.tag);
  doc["frame_count"] = input.frame_count;
  doc["rig"] = Json{{"rgb", intrinsics_json(input.rig.rgb)},
                    {"infrared", intrinsics_json(input.rig.infrared)},
                    {"rgb_to_ir", transform_json(input.rig.rgb_to_ir)}};
  Json obs = Json::array();
  for (const auto& o : input.observations) {
    obs.push_back(Json::array({o.frame, o.landmark, o.pixel.x(), o.pixel.y(),
                               o.point_cam.x(), o.point_cam.y(),
                               o.point_cam.z(), o.valid_depth ? 1 : 0}));
  }
  doc["observations"] = std::move(obs);
  Json pairs = Json::array();
  for (const auto& p : input.pairs) {
    pairs.push_back(Json::array({p.frame_a, p.frame_b}));
  }
  doc["pairs"] = std::move(pairs);
  Json loops = Json::array();
  for (const auto& l : input.loop_candidates) {
    Json matches = Json::array();
    for (const auto& [a, b] : l.matches) {
      matches.push_back(Json::array({a, b}));
    }
    loops.push_back(Json{{"frame_a", l.frame_a},
                         {"frame_b", l.frame_b},
                         {"matches", std::move(matches)}});
  }
  doc["loops"] = std::move(loops);
  dump(path, doc);
}

SideInput read_tracks(const std::string& path) {
  const Json doc = load_json(path);
  require_schema(doc, "orchard/tracks@1", path);
  SideInput input;
  input.tag = doc.at("side").get<std::string>() == "back" ? SideTag::back
                                                          : SideTag::front;
  input.frame_count = doc.at("frame_count").get<int>();
  const auto& rig = doc.at("rig");
  input.rig.rgb = to_intrinsics(rig.at("rgb"));
  input.rig.infrared = to_intrinsics(rig.at("infrared"));
  input.rig.rgb_to_ir = to_transform(rig.at("rgb_to_ir"));
  for (const auto& o : doc.at("observations")) {
    Observation obs;
    obs.frame = o.at(0).get<int>();
    obs.landmark = o.at(1).get<int>();
    obs.pixel = Vector2d(o.at(2).get<double>(), o.at(3).get<double>());
    obs.point_cam = Vector3d(o.at(4).get<double>(), o.at(5).get<double>(),
                             o.at(6).get<double>());
    obs.valid_depth = o.at(7).get<int>() != 0;
    if (!obs.pixel.allFinite() || !obs.point_cam.allFinite()) {
      throw Error(ErrorCode::input_error,
                  path + ": non-finite observation");
    }
    input.observations.push_back(obs);
  }
  for (const auto& p : doc.at("pairs")) {
    input.pairs.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
  }
  for (const auto& l : doc.at("loops")) {
    LoopCandidate cand;
    cand.frame_a = l.at("frame_a").get<int>();
    cand.frame_b = l.at("frame_b").get<int>();
    for (const auto& m : l.at("matches")) {
      cand.matches.emplace_back(m.at(0).get<int>(), m.at(1).get<int>());
    }
    input.loop_candidates.push_back(std::move(cand));
  }
  return input;
}

void write_annotations(const std::string& path, SideTag side,
                       const std::vector<TrunkAnnotation>& trunks,
                       const std::vector<GroundAnnotation>& grounds) {
  Json doc;
  doc["schema"] = "orchard/annotations@1";
  doc["side"] = side_name(side);
  Json jt = Json::array();
  for (const auto& t : trunks) {
    Json frames = Json::array();
    for (const auto& f : t.frames) {
      Json obs = Json::array();
      for (const auto& mo : f.member_obs) {
        obs.push_back(Json::array({mo.member, mo.point_cam.x(),
                                   mo.point_cam.y(), mo.point_cam.z()}));
      }
      frames.push_back(Json{{"frame", f.frame},
                            {"line_a", vec3(f.line_a.coeffs)},
                            {"line_b", vec3(f.line_b.coeffs)},
                            {"members", f.members},
                            {"member_obs", std::move(obs)}});
    }
    Json entry{{"id", t.id}, {"frames", std::move(frames)}};
    if (t.slice_h0 >= 0) entry["slice_h0"] = t.slice_h0;
    if (t.slice_dh > 0) entry["slice_dh"] = t.slice_dh;
    jt.push_back(std::move(entry));
  }
  doc["trunks"] = std::move(jt);
  Json jg = Json::array();
  for (const auto& g : grounds) {
    Json obs = Json::array();
    for (const auto& mo : g.member_obs) {
      obs.push_back(Json::array({mo.member, mo.point_cam.x(),
                                 mo.point_cam.y(), mo.point_cam.z()}));
    }
    jg.push_back(Json{{"id", g.id},
                      {"frame", g.frame},
                      {"candidates", g.candidates},
                      {"member_obs", std::move(obs)}});
  }
  doc["grounds"] = std::move(jg);
  dump(path, doc);
}

void read_annotations(const std::string& path, SideTag* side,
                      std::vector<TrunkAnnotation>* trunks,
                      std::vector<GroundAnnotation>* grounds) {
  const Json doc = load_json(path);
  require_schema(doc, "orchard/annotations@1", path);
  if (side) {
    *side = doc.at("side").get<std::string>() == "back" ? SideTag::back
                                                        : SideTag::front;
  }
  trunks->clear();
  grounds->clear();
  for (const auto& t : doc.at("trunks")) {
    TrunkAnnotation ann;
    ann.id = t.at("id").get<int>();
    ann.side = side ? *side : SideTag::front;
    ann.slice_h0 = t.value("slice_h0", -1.0);
    ann.slice_dh = t.value("slice_dh", -1.0);
    for (const auto& f : t.at("frames")) {
      TrunkAnnotationFrame frame;
      frame.frame = f.at("frame").get<int>();
      frame.line_a = ImageLine::from_coefficients(to_vec3(f.at("line_a")));
      frame.line_b = ImageLine::from_coefficients(to_vec3(f.at("line_b")));
      frame.members = f.at("members").get<std::vector<int>>();
      for (const auto& mo : f.at("member_obs")) {
        frame.member_obs.push_back(
            {mo.at(0).get<int>(),
             Vector3d(mo.at(1).get<double>(), mo.at(2).get<double>(),
                      mo.at(3).get<double>())});
      }
      ann.frames.push_back(std::move(frame));
    }
    if (ann.frames.empty()) {
      throw Error(ErrorCode::input_error,
                  path + ": trunk annotation without frames");
    }
    trunks->push_back(std::move(ann));
  }
  for (const auto& g : doc.at("grounds")) {
    GroundAnnotation ann;
    ann.id = g.at("id").get<int>();
    ann.side = side ? *side : SideTag::front;
    ann.frame = g.at("frame").get<int>();
    ann.candidates = g.at("candidates").get<std::vector<int>>();
    if (ann.candidates.size() < 3) {
      throw Error(ErrorCode::input_error,
                  path + ": ground annotation needs 3+ candidates");
    }
    for (const auto& mo : g.at("member_obs")) {
      ann.member_obs.push_back(
          {mo.at(0).get<int>(),
           Vector3d(mo.at(1).get<double>(), mo.at(2).get<double>(),
                    mo.at(3).get<double>())});
    }
    grounds->push_back(std::move(ann));
  }
}

void write_correspondences(const std::string& path,
                           const std::vector<ObjectCorrespondence>& corr) {
  Json doc;
  doc["schema"] = "orchard/correspondences@1";
  Json cyl = Json::array(), pl = Json::array();
  for (const auto& c : corr) {
    (c.kind == ObjectKind::cylinder ? cyl : pl)
        .push_back(Json::array({c.front_id, c.back_id}));
  }
  doc["cylinders"] = std::move(cyl);
  doc["planes"] = std::move(pl);
  dump(path, doc);
}

std::vector<ObjectCorrespondence> read_correspondences(
    const std::string& path) {
  const Json doc = load_json(path);
  require_schema(doc, "orchard/correspondences@1", path);
  std::vector<ObjectCorrespondence> corr;
  for (const auto& c : doc.at("cylinders")) {
    corr.push_back({c.at(0).get<int>(), c.at(1).get<int>(),
                    ObjectKind::cylinder});
  }
  for (const auto& c : doc.at("planes")) {
    corr.push_back({c.at(0).get<int>(), c.at(1).get<int>(), ObjectKind::plane});
  }
  return corr;
}

void write_ground_truth(const std::string& path, const GroundTruth& truth,
                        const SceneSpec& spec) {
  Json doc;
  doc["schema"] = "orchard/ground_truth@1";
  doc["spec"] = Json::parse(spec.to_json_text());
  doc["f_from_b"] = transform_json(truth.f_from_b);
  Json trees = Json::array();
  for (const auto& t : truth.trees) {
    trees.push_back(Json{{"id", t.id},
                         {"diameter", t.diameter},
                         {"height", t.height},
                         {"volume_sample", t.volume_sample},
                         {"base", vec3(t.trunk_base)},
                         {"axis", vec3(t.trunk_axis)}});
  }
  doc["trees"] = std::move(trees);
  auto traj = [](const std::vector<RigidTransform>& poses) {
    Json out = Json::array();
    for (const auto& p : poses) out.push_back(transform_json(p));
    return out;
  };
  doc["front_trajectory"] = traj(truth.front_trajectory);
  doc["back_trajectory"] = traj(truth.back_trajectory);
  auto labels = [](const std::vector<PointLabel>& ls) {
    Json out = Json::array();
    for (const auto& l : ls) out.push_back(Json::array({l.tree, l.cls}));
    return out;
  };
  doc["front_labels"] = labels(truth.front_labels);
  doc["back_labels"] = labels(truth.back_labels);
  dump(path, doc);
}

GroundTruth read_ground_truth(const std::string& path, SceneSpec* spec) {
  const Json doc = load_json(path);
  require_schema(doc, "orchard/ground_truth@1", path);
  if (spec) *spec = SceneSpec::from_json_text(doc.at("spec").dump());
  GroundTruth truth;
  truth.f_from_b = to_transform(doc.at("f_from_b"));
  for (const auto& t : doc.at("trees")) {
    TreeTruth tt;
    tt.id = t.at("id").get<int>();
    tt.diameter = t.at("diameter").get<double>();
    tt.height = t.at("height").get<double>();
    tt.volume_sample = t.at("volume_sample").get<double>();
    tt.trunk_base = to_vec3(t.at("base"));
    tt.trunk_axis = to_vec3(t.at("axis"));
    truth.trees.push_back(tt);
  }
  auto traj = [](const Json& arr) {
    std::vector<RigidTransform> out;
    for (const auto& p : arr) out.push_back(to_transform(p));
    return out;
  };
  truth.front_trajectory = traj(doc.at("front_trajectory"));
  truth.back_trajectory = traj(doc.at("back_trajectory"));
  auto labels = [](const Json& arr) {
    std::vector<PointLabel> out;
    for (const auto& l : arr) {
      out.push_back({l.at(0).get<int>(), l.at(1).get<int>()});
    }
    return out;
  };
  truth.front_labels = labels(doc.at("front_labels"));
  truth.back_labels = labels(doc.at("back_labels"));
  return truth;
}

void write_reconstruction(const std::string& path,
                          const ReconstructionSide& side) {
  Json doc;
  doc["schema"] = "orchard/reconstruction@1";
  doc["side"] = side_name(side.tag);
  Json poses = Json::array();
  for (const auto& f : side.frames) {
    poses.push_back(Json{{"frame", f.id}, {"pose", transform_json(f.pose)}});
  }
  doc["poses"] = std::move(poses);
  Json lms = Json::array();
  for (const auto& l : side.landmarks) {
    lms.push_back(Json{{"id", l.id}, {"p", vec3(l.position)}});
  }
  doc["landmarks"] = std::move(lms);
  dump(path, doc);
}

void read_reconstruction(const std::string& path, ReconstructionSide* side) {
  const Json doc = load_json(path);
  require_schema(doc, "orchard/reconstruction@1", path);
  side->tag = doc.at("side").get<std::string>() == "back" ? SideTag::back
                                                          : SideTag::front;
  side->frames.clear();
  for (const auto& p : doc.at("poses")) {
    CameraFrame frame;
    frame.id = p.at("frame").get<int>();
    frame.pose = to_transform(p.at("pose"));
    side->frames.push_back(frame);
  }
  side->landmarks.clear();
  for (const auto& l : doc.at("landmarks")) {
    LandmarkPoint lm;
    lm.id = l.at("id").get<int>();
    lm.position = to_vec3(l.at("p"));
    side->landmarks.push_back(lm);
  }
  side->rebuild_landmark_index();
}

namespace {

Json cylinder_json(const Cylinder& c) {
  return Json{{"axis", vec3(c.axis)},
              {"origin", vec3(c.origin)},
              {"radius", c.radius},
              {"height", c.height}};
}

Cylinder to_cylinder(const Json& j) {
  Cylinder c;
  c.axis = to_vec3(j.at("axis"));
  c.origin = to_vec3(j.at("origin"));
  c.radius = j.at("radius").get<double>();
  c.height = j.at("height").get<double>();
  return c;
}

}  // namespace

void write_merged(const std::string& dir, const MergedModel& merged) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  // transform.txt: 12 row-major numbers of [R | t], then the quaternion
  // form "tx ty tz qx qy qz qw".
  {
    std::FILE* f = std::fopen((dir + "/transform.txt").c_str(), "w");
    if (!f) throw Error(ErrorCode::input_error, "cannot write transform.txt");
    const auto& m = merged.f_from_b;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) std::fprintf(f, "%.17g ", m.rotation(i, j));
      std::fprintf(f, "%.17g%s", m.translation[i], i == 2 ? "\n" : " ");
    }
    const auto q = to_quaternion(m.rotation);
    std::fprintf(f, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                 m.translation.x(), m.translation.y(), m.translation.z(),
                 q.x(), q.y(), q.z(), q.w());
    std::fclose(f);
  }

  {
    std::FILE* f = std::fopen((dir + "/metrics.csv").c_str(), "w");
    if (!f) throw Error(ErrorCode::input_error, "cannot write metrics.csv");
    std::fprintf(f, "stage,trunk,offset_m\n");
    for (const auto& m : merged.metrics) {
      for (size_t i = 0; i < m.trunk_offsets.size(); ++i) {
        std::fprintf(f, "%s,%zu,%.17g\n", m.stage.c_str(), i,
                     m.trunk_offsets[i]);
      }
      std::fprintf(f, "%s,mean,%.17g\n", m.stage.c_str(), m.mean_offset);
      std::fprintf(f, "%s,max,%.17g\n", m.stage.c_str(), m.max_offset);
    }
    std::fclose(f);
  }

  write_ply(dir + "/merged_cloud.ply", merged.cloud);

  Json doc;
  doc["schema"] = "orchard/merged@1";
  doc["f_from_b"] = transform_json(merged.f_from_b);
  doc["front_point_count"] = merged.front_point_count;
  auto side_json = [](const ReconstructionSide& side) {
    Json poses = Json::array();
    for (const auto& f : side.frames) {
      poses.push_back(Json{{"frame", f.id}, {"pose", transform_json(f.pose)}});
    }
    Json lms = Json::array();
    for (const auto& l : side.landmarks) {
      lms.push_back(Json{{"id", l.id}, {"p", vec3(l.position)}});
    }
    return Json{{"poses", std::move(poses)}, {"landmarks", std::move(lms)}};
  };
  doc["front"] = side_json(merged.front);
  doc["back"] = side_json(merged.back);
  Json objs = Json::array();
  for (const auto& o : merged.objects) {
    objs.push_back(Json{
        {"front_id", o.front_id},
        {"back_id", o.back_id},
        {"kind", o.kind == ObjectKind::cylinder ? "cylinder" : "plane"},
        {"pose", transform_json(o.pose)},
        {"shape", o.shape},
        {"member_count", o.members.size()}});
  }
  doc["objects"] = std::move(objs);
  Json fits = Json::array();
  for (const auto& f : merged.trunk_fits) {
    fits.push_back(Json{{"front", cylinder_json(f.front)},
                        {"back", cylinder_json(f.back)},
                        {"diameter", f.diameter}});
  }
  doc["trunk_fits"] = std::move(fits);
  Json metrics = Json::array();
  for (const auto& m : merged.metrics) {
    metrics.push_back(Json{{"stage", m.stage},
                           {"offsets", m.trunk_offsets},
                           {"mean", m.mean_offset},
                           {"max", m.max_offset}});
  }
  doc["metrics"] = std::move(metrics);
  dump(dir + "/merged.json", doc);
}

MergedModel read_merged(const std::string& dir) {
  const Json doc = load_json(dir + "/merged.json");
  require_schema(doc, "orchard/merged@1", dir + "/merged.json");
  MergedModel merged;
  merged.f_from_b = to_transform(doc.at("f_from_b"));
  merged.front_point_count = doc.at("front_point_count").get<int>();
  auto read_side = [](const Json& j, ReconstructionSide* side) {
    for (const auto& p : j.at("poses")) {
      CameraFrame f;
      f.id = p.at("frame").get<int>();
      f.pose = to_transform(p.at("pose"));
      side->frames.push_back(f);
    }
    for (const auto& l : j.at("landmarks")) {
      LandmarkPoint lm;
      lm.id = l.at("id").get<int>();
      lm.position = to_vec3(l.at("p"));
      side->landmarks.push_back(lm);
    }
    side->rebuild_landmark_index();
  };
  read_side(doc.at("front"), &merged.front);
  read_side(doc.at("back"), &merged.back);
  for (const auto& o : doc.at("objects")) {
    SemanticObjectState obj;
    obj.front_id = o.at("front_id").get<int>();
    obj.back_id = o.at("back_id").get<int>();
    obj.kind = o.at("kind").get<std::string>() == "plane"
                   ? ObjectKind::plane
                   : ObjectKind::cylinder;
    obj.pose = to_transform(o.at("pose"));
    obj.shape = o.at("shape").get<double>();
    merged.objects.push_back(std::move(obj));
  }
  for (const auto& f : doc.at("trunk_fits")) {
    TwoSidedTrunkFit fit;
    fit.front = to_cylinder(f.at("front"));
    fit.back = to_cylinder(f.at("back"));
    fit.diameter = f.at("diameter").get<double>();
    merged.trunk_fits.push_back(fit);
  }
  for (const auto& m : doc.at("metrics")) {
    StageMetrics sm;
    sm.stage = m.at("stage").get<std::string>();
    sm.trunk_offsets = m.at("offsets").get<std::vector<double>>();
    sm.mean_offset = m.at("mean").get<double>();
    sm.max_offset = m.at("max").get<double>();
    merged.metrics.push_back(std::move(sm));
  }
  merged.cloud = read_ply(dir + "/merged_cloud.ply");
  return merged;
}

void write_report_json(const std::string& path,
                       const std::vector<TreeRecord>& records) {
  Json doc;
  doc["schema"] = "orchard/report@1";
  Json trees = Json::array();
  for (const auto& r : records) {
    Json entry{{"tree_id", r.tree_id},       {"diameter_m", r.diameter_m},
               {"height_m", r.height_m},     {"vol_alpha_m3", r.vol_alpha_m3},
               {"vol_hull_m3", r.vol_hull_m3}, {"vol_cyl_m3", r.vol_cyl_m3},
               {"alpha_m", r.alpha_m}};
    if (!r.error.empty()) entry["error"] = r.error;
    trees.push_back(std::move(entry));
  }
  doc["trees"] = std::move(trees);
  dump(path, doc);
}

void write_report_csv(const std::string& path,
                      const std::vector<TreeRecord>& records) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(ErrorCode::input_error, "cannot write " + path);
  std::fprintf(f,
               "tree_id,diameter_m,height_m,vol_alpha_m3,vol_hull_m3,"
               "vol_cyl_m3,alpha_m\n");
  for (const auto& r : records) {
    std::fprintf(f, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.tree_id,
                 r.diameter_m, r.height_m, r.vol_alpha_m3, r.vol_hull_m3,
                 r.vol_cyl_m3, r.alpha_m);
  }
  std::fclose(f);
}

void write_scene(const std::string& dir, const SceneData& scene) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_ply(dir + "/front_cloud.ply", scene.front.cloud);
  write_ply(dir + "/back_cloud.ply", scene.back.cloud);
  write_tracks(dir + "/front_tracks.json", scene.front.input);
  write_tracks(dir + "/back_tracks.json", scene.back.input);
  write_annotations(dir + "/front_annotations.json", SideTag::front,
                    scene.front.trunks, scene.front.grounds);
  write_annotations(dir + "/back_annotations.json", SideTag::back,
                    scene.back.trunks, scene.back.grounds);
  write_correspondences(dir + "/correspondences.json", scene.correspondences);
  write_ground_truth(dir + "/ground_truth.json", scene.truth, scene.spec);
}

}  // namespace orchard::io
