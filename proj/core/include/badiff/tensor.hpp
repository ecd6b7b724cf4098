#pragma once
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "badiff/errors.hpp"
#include "badiff/rng.hpp"

namespace badiff {

class Tensor;

namespace detail {

// One node of the dynamic computation graph. Tensor handles share nodes;
// an op's result node keeps its parents alive and carries a closure that
// scatters the node's gradient into the parents' gradient buffers.
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Gradient tracking is on by default; sampling and evaluation wrap in
// NoGradGuard so graphs are not retained across reverse-diffusion loops.
bool grad_enabled();
void set_grad_enabled(bool enabled);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Every op validates its output for NaN/Inf; a hit raises numeric_error.
bool finite_checks_enabled();
void set_finite_checks_enabled(bool enabled);

// Dense multi-dimensional array of doubles with an optional gradient slot.
// Copying a Tensor copies the handle, not the storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, RngStream& rng,
                      double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const;
  int ndim() const;
  int dim(int i) const;  // negative i counts from the back
  int64_t numel() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  double* data();
  const double* data() const;

  double item() const;  // scalar tensors only

  bool requires_grad() const;
  void set_requires_grad(bool v);
  bool has_grad() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void ensure_grad();
  void zero_grad();

  // Reverse pass from a scalar output. Seeds d(out)/d(out) = 1, walks the
  // graph in reverse topological order, accumulates into leaf grads.
  void backward() const;

  // New leaf sharing no graph history (copies values).
  Tensor detach() const;

  // Same storage viewed under a different shape (numel must match).
  Tensor reshaped(std::vector<int> new_shape) const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  // Graph construction helper for custom ops. `backward` may be empty for
  // non-differentiable results. Tracking is skipped when grads are globally
  // disabled or no parent requires them.
  static Tensor make_op(std::vector<int> shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::TensorNode&)> backward,
                        const char* opname);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

// Named model parameter. Trainable parameters always carry a grad slot.
struct Parameter {
  Tensor tensor;
  std::string name;
  bool trainable = true;
};

// Ordered registry of parameters; order is registration order and is the
// canonical ordering for optimizer state and checkpoints.
class ParamSet {
 public:
  Tensor add(const std::string& name, std::vector<int> shape, RngStream& rng,
             double init_stddev, bool trainable = true);
  Tensor add_zeros(const std::string& name, std::vector<int> shape,
                   bool trainable = true);
  Tensor add_full(const std::string& name, std::vector<int> shape, double v,
                  bool trainable = true);

  bool contains(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  size_t size() const { return params_.size(); }
  Parameter& operator[](size_t i) { return params_[i]; }
  const Parameter& operator[](size_t i) const { return params_[i]; }

  std::vector<Parameter>& list() { return params_; }
  const std::vector<Parameter>& list() const { return params_; }

  void zero_grads();
  int64_t total_elements() const;

 private:
  void register_param(Parameter p);
  std::vector<Parameter> params_;
};

int64_t shape_numel(const std::vector<int>& shape);
void check_finite(const std::vector<double>& v, const char* what);

}  // namespace badiff
