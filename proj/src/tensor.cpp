#include "llic/tensor.hpp"

#include <cmath>
#include <sstream>

namespace llic {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_finite_checks = false;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw AutogradError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) throw ShapeError("dim index out of range for shape " + shape_str(s));
  return s[i];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<double> Tensor::data() {
  if (!node_) throw AutogradError("use of undefined tensor");
  return node_->data;
}

std::span<const double> Tensor::data() const {
  if (!node_) throw AutogradError("use of undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_) throw AutogradError("use of undefined tensor");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw AutogradError("use of undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw AutogradError("use of undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data);
}

bool Tensor::all_finite() const {
  for (double v : data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const std::shared_ptr<detail::Node>& node) {
  node->tape_generation = generation_;
  node->tape_index = entries_.size();
  entries_.push_back(node);
  // Forward passes that are never differentiated leave expired entries behind.
  if (entries_.size() >= (1u << 22) && entries_.size() % (1u << 20) == 0) {
    std::size_t live = 0;
    for (const auto& e : entries_) live += e.expired() ? 0 : 1;
    if (live < entries_.size() / 2) {
      std::vector<std::weak_ptr<detail::Node>> kept;
      kept.reserve(live);
      for (auto& e : entries_) {
        if (auto p = e.lock()) {
          p->tape_index = kept.size();
          kept.push_back(p);
        }
      }
      entries_ = std::move(kept);
    }
  }
}

void Tape::reset() {
  entries_.clear();
  ++generation_;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw AutogradError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw AutogradError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto& root = loss.node();
  if (!root->requires_grad) throw AutogradError("backward on a tensor that does not require grad");
  if (!root->backward) {
    // A leaf: d loss / d loss = 1.
    root->ensure_grad();
    root->grad[0] += 1.0;
    return;
  }
  if (root->tape_generation != generation_ || root->tape_index >= entries_.size() ||
      entries_[root->tape_index].lock() != root) {
    throw AutogradError("backward without tape: the loss was not recorded on the current tape "
                        "(already consumed or recorded under no-grad)");
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (std::size_t i = root->tape_index + 1; i-- > 0;) {
    auto node = entries_[i].lock();
    if (!node || node->grad.empty() || !node->backward) continue;
    node->backward(*node);
  }
  // Release the graph: closures hold the parents alive.
  for (auto& e : entries_) {
    if (auto node = e.lock()) node->backward = nullptr;
  }
  reset();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

namespace detail {

namespace {

Tensor finish(Shape shape, std::vector<double> values, bool needs_grad,
              std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  if (g_finite_checks) {
    for (double v : node->data) {
      if (!std::isfinite(v)) throw NumericError("non-finite value produced by op, shape " + shape_str(node->shape));
    }
  }
  if (needs_grad && g_grad_enabled) {
    node->requires_grad = true;
    node->backward = std::move(backward_fn);
    Tape::current().record(node);
  }
  return Tensor::wrap(std::move(node));
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || (t && wants_grad(*t));
  return finish(std::move(shape), std::move(values), needs, std::move(backward_fn));
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn) {
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || wants_grad(t);
  return finish(std::move(shape), std::move(values), needs, std::move(backward_fn));
}

void accumulate_grad(const Tensor& t, std::span<const double> g) {
  if (!wants_grad(t)) return;
  Node& node = *t.node();
  if (g.size() != node.data.size()) throw AutogradError("gradient size mismatch");
  node.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

}  // namespace detail

}  // namespace llic
