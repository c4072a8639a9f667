#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace decap {

using Real = double;

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

/// Reverse-mode autodiff tensor. Each tensor optionally carries a backward
/// closure and references to its parents; backward() replays the recorded
/// graph in reverse topological order. A graph is confined to one thread.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<std::size_t> shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<Real> d, bool rg = false)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        std::size_t n = 1;
        for (auto e : shape) n *= e;
        if (n != data.size())
            throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                        " does not match " + std::to_string(data.size()) +
                                        " elements");
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    std::size_t size() const { return data.size(); }

    static TensorPtr create(std::vector<std::size_t> s, std::vector<Real> d, bool rg = false) {
        return std::make_shared<Tensor>(std::move(s), std::move(d), rg);
    }
    static TensorPtr zeros(std::vector<std::size_t> s, bool rg = false) {
        std::size_t n = 1;
        for (auto e : s) n *= e;
        return create(std::move(s), std::vector<Real>(n, 0.0), rg);
    }
    static TensorPtr full(std::vector<std::size_t> s, Real v, bool rg = false) {
        std::size_t n = 1;
        for (auto e : s) n *= e;
        return create(std::move(s), std::vector<Real>(n, v), rg);
    }
    static TensorPtr scalar(Real v, bool rg = false) {
        return create({1}, {v}, rg);
    }

    Real item() const {
        if (data.size() != 1) throw std::logic_error("item(): tensor is not scalar");
        return data[0];
    }

    bool on_tape() const { return requires_grad || static_cast<bool>(fn_); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        std::fill(grad.begin(), grad.end(), 0.0);
    }

    /// Backpropagate from this scalar. Leaf grads accumulate across calls.
    void backward() {
        if (data.size() != 1)
            throw std::logic_error("backward(): loss must be scalar, got " + shape_str(shape));
        std::vector<Tensor*> order;
        topo_order(order);
        ensure_grad();
        grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->fn_) (*it)->fn_();
    }

    // Op nodes are built through this; backward closure receives the node so
    // it can read the output gradient.
    static TensorPtr make_node(std::vector<TensorPtr> parents,
                               std::vector<std::size_t> s, std::vector<Real> d,
                               std::function<void(Tensor&)> bw) {
        auto out = std::make_shared<Tensor>(std::move(s), std::move(d));
        bool tape = false;
        for (const auto& p : parents)
            if (p && p->on_tape()) { tape = true; break; }
        if (tape && bw) {
            out->parents_ = std::move(parents);
            Tensor* raw = out.get();
            out->fn_ = [raw, f = std::move(bw)]() {
                raw->ensure_grad();
                f(*raw);
            };
        }
        return out;
    }

private:
    std::function<void()> fn_;
    std::vector<TensorPtr> parents_;

    // Iterative post-order DFS; recursion depth would scale with graph depth.
    void topo_order(std::vector<Tensor*>& out) {
        std::unordered_set<Tensor*> seen;
        std::vector<std::pair<Tensor*, std::size_t>> stack;
        stack.emplace_back(this, 0);
        seen.insert(this);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents_.size()) {
                Tensor* p = node->parents_[next++].get();
                if (p && !seen.count(p) && p->fn_) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                out.push_back(node);
                stack.pop_back();
            }
        }
    }
};

inline void accumulate_grad(const TensorPtr& t, std::size_t i, Real v) {
    if (t->on_tape()) {
        t->ensure_grad();
        t->grad[i] += v;
    }
}

} // namespace decap
