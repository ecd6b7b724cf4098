#include "badiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace badiff {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_finite_checks = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool enabled) { g_grad_enabled = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks_enabled(bool enabled) { g_finite_checks = enabled; }

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

void check_finite(const std::vector<double>& v, const char* what) {
  if (!g_finite_checks) return;
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw numeric_error(std::string("non-finite value in ") + what);
    }
  }
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<detail::TensorNode>();
  n->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return full({1}, v, requires_grad);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("from_data: shape does not match data length");
  }
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(std::move(n));
}

Tensor Tensor::randn(std::vector<int> shape, RngStream& rng, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& x : t.values()) x = stddev * rng.normal();
  return t;
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }

int Tensor::dim(int i) const {
  int nd = ndim();
  if (i < 0) i += nd;
  if (i < 0 || i >= nd) throw std::invalid_argument("dim index out of range");
  return node_->shape[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return node_->numel(); }

std::vector<double>& Tensor::values() { return node_->value; }
const std::vector<double>& Tensor::values() const { return node_->value; }
double* Tensor::data() { return node_->value.data(); }
const double* Tensor::data() const { return node_->value.data(); }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  if (v) node_->ensure_grad();
}

bool Tensor::has_grad() const {
  return node_->grad.size() == node_->value.size() && !node_->value.empty();
}

std::vector<double>& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.size() != node_->value.size()) {
    throw std::invalid_argument("tensor has no gradient");
  }
  return node_->grad;
}

void Tensor::ensure_grad() { node_->ensure_grad(); }

void Tensor::zero_grad() {
  node_->ensure_grad();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar output");
  }
  using detail::TensorNode;
  // Iterative post-order DFS for a reverse-topological schedule.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order) n->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward) n->backward(*n);
  }
  if (g_finite_checks) {
    for (TensorNode* n : order) check_finite(n->grad, "backward gradient");
  }
}

Tensor Tensor::detach() const {
  return from_data(node_->shape, node_->value, false);
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw std::invalid_argument("reshaped: element count mismatch");
  }
  std::vector<Tensor> parents{*this};
  return make_op(std::move(new_shape), node_->value, std::move(parents),
                 [](detail::TensorNode& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   for (size_t i = 0; i < self.grad.size(); ++i) {
                     p.grad[i] += self.grad[i];
                   }
                 },
                 "reshape");
}

Tensor Tensor::make_op(std::vector<int> shape, std::vector<double> value,
                       std::vector<Tensor> parents,
                       std::function<void(detail::TensorNode&)> backward,
                       const char* opname) {
  if (shape_numel(shape) != static_cast<int64_t>(value.size())) {
    throw std::invalid_argument(std::string(opname) + ": bad output shape");
  }
  check_finite(value, opname);
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = g_grad_enabled;
  if (track) {
    bool any = false;
    for (const Tensor& p : parents) any = any || p.requires_grad();
    track = any;
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (Tensor& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

Tensor ParamSet::add(const std::string& name, std::vector<int> shape,
                     RngStream& rng, double init_stddev, bool trainable) {
  Tensor t = Tensor::randn(std::move(shape), rng, init_stddev, trainable);
  register_param(Parameter{t, name, trainable});
  return t;
}

Tensor ParamSet::add_zeros(const std::string& name, std::vector<int> shape,
                           bool trainable) {
  Tensor t = Tensor::zeros(std::move(shape), trainable);
  register_param(Parameter{t, name, trainable});
  return t;
}

Tensor ParamSet::add_full(const std::string& name, std::vector<int> shape,
                          double v, bool trainable) {
  Tensor t = Tensor::full(std::move(shape), v, trainable);
  register_param(Parameter{t, name, trainable});
  return t;
}

void ParamSet::register_param(Parameter p) {
  if (contains(p.name)) {
    throw std::invalid_argument("duplicate parameter name: " + p.name);
  }
  params_.push_back(std::move(p));
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

Parameter& ParamSet::at(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("unknown parameter: " + name);
}

const Parameter& ParamSet::at(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("unknown parameter: " + name);
}

void ParamSet::zero_grads() {
  for (auto& p : params_) p.tensor.zero_grad();
}

int64_t ParamSet::total_elements() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

}  // namespace badiff
