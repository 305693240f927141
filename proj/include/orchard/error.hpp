#pragma once

#include <stdexcept>
#include <string>

namespace orchard {

// Failure classes surfaced by the pipeline. The CLI maps these to exit
// codes: input errors -> 2, degenerate geometry -> 3, solver failures -> 4.
enum class ErrorCode {
  invalid_rotation,
  degenerate_input,
  degenerate_view,
  degenerate_configuration,
  behind_camera,
  bad_initialization,
  unsolvable,
  no_model_found,
  insufficient_data,
  missing_constraint,
  unconstrained_parameter,
  disconnected_graph,
  ordering_violation,
  empty_tree,
  bad_spec,
  input_error,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_rotation: return "invalid-rotation";
    case ErrorCode::degenerate_input: return "degenerate-input";
    case ErrorCode::degenerate_view: return "degenerate-view";
    case ErrorCode::degenerate_configuration: return "degenerate-configuration";
    case ErrorCode::behind_camera: return "behind-camera";
    case ErrorCode::bad_initialization: return "bad-initialization";
    case ErrorCode::unsolvable: return "unsolvable";
    case ErrorCode::no_model_found: return "no-model-found";
    case ErrorCode::insufficient_data: return "insufficient-data";
    case ErrorCode::missing_constraint: return "missing-constraint";
    case ErrorCode::unconstrained_parameter: return "unconstrained-parameter";
    case ErrorCode::disconnected_graph: return "disconnected-graph";
    case ErrorCode::ordering_violation: return "ordering-violation";
    case ErrorCode::empty_tree: return "empty-tree";
    case ErrorCode::bad_spec: return "bad-spec";
    case ErrorCode::input_error: return "input-error";
  }
  return "unknown";
}

}  // namespace orchard
