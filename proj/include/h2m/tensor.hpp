#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace h2m {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One recorded value. Interior nodes keep their inputs alive and a closure
// that pushes `grad` into the inputs' gradients.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows in
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return inputs.empty(); }
    std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major float64 tensor with optional reverse-mode gradient.
//
// A Tensor is a cheap handle; copies share storage. Values are treated as
// immutable once an op has consumed them; only leaves (parameters) are
// mutated in place, by optimizers and checkpoint loading.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Raw write access; only legal on leaves.
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Same values, cut from the graph.
    Tensor detach() const;
    Tensor clone() const;

    // Reverse sweep from a scalar root. Leaf gradients accumulate across calls.
    void backward() const;

    // Internal plumbing used by op implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

   private:
    std::shared_ptr<detail::Node> node_;
};

// Thread-local switch; when off, ops do not record backward closures.
bool grad_enabled();

class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

namespace detail {

// Builds the result node of an op. Records `backward` only when grad mode is
// on and at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace h2m
