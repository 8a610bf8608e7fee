#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace llic {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Error taxonomy shared by the whole library. The CLI maps these onto exit codes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AutogradError : std::logic_error {
  using std::logic_error::logic_error;
};
// Malformed or inconsistent file / stream contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// A file could not be opened, read or written.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  // Propagates `grad` of this node into its parents. Null for leaves.
  std::function<void(Node&)> backward;
  std::uint64_t tape_generation = 0;
  std::size_t tape_index = 0;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major N-d array of doubles with an optional gradient.
///
/// A Tensor is a cheap handle: copies share storage. Use `clone()` for a deep
/// copy. Operations that take a tensor requiring grad are recorded on the
/// calling thread's Tape while grad mode is enabled.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor from(std::initializer_list<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy of the values, detached from any graph.
  Tensor clone() const;
  /// Same storage semantics as clone(); kept for readability at call sites.
  Tensor detach() const { return clone(); }

  bool all_finite() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations executed on this thread.
///
/// Entries are weak: a node nobody references can no longer contribute to a
/// loss, so it is skipped. `backward` consumes the tape.
class Tape {
 public:
  static Tape& current();

  void record(const std::shared_ptr<detail::Node>& node);
  void reset();
  std::size_t size() const { return entries_.size(); }
  std::uint64_t generation() const { return generation_; }

  void backward(const Tensor& loss);

 private:
  std::vector<std::weak_ptr<detail::Node>> entries_;
  std::uint64_t generation_ = 1;
};

/// RAII switch that disables graph recording on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// When enabled, every op output is scanned for NaN/Inf and a NumericError is
/// thrown at the offending op. Thread-local; off by default.
void set_finite_checks(bool on);
bool finite_checks();

/// Runs reverse-mode accumulation from a scalar loss over the current tape.
void backward(const Tensor& loss);

namespace detail {

/// Creates the output node of an op. `inputs` decide whether it needs grad.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn);
Tensor make_result(Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn);

inline bool wants_grad(const Tensor& t) {
  return t.defined() && t.requires_grad();
}

/// Adds `g` (same element count) into t's gradient when t takes part in the graph.
void accumulate_grad(const Tensor& t, std::span<const double> g);

}  // namespace detail

}  // namespace llic
