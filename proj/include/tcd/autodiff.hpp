#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tcd/attention.hpp"
#include "tcd/tensor.hpp"

namespace tcd {

/// Named trainable tensors. Indices are stable for the lifetime of the store.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return values_.size(); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index(const std::string& name) const;

  std::size_t element_count() const;

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Per-parameter gradients aligned with a ParameterStore.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterStore& store);

  std::size_t size() const noexcept { return grads_.size(); }
  Tensor& operator[](std::size_t i) { return grads_.at(i); }
  const Tensor& operator[](std::size_t i) const { return grads_.at(i); }

  void accumulate(const Gradients& other);
  void scale(double factor);

 private:
  std::vector<Tensor> grads_;
};

class Graph;

/// Handle to a node in a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor& value() const;
  std::size_t id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward walks ids downwards and visits each
/// reachable node once.
///
/// A graph built with `record == false` skips backward bookkeeping and is
/// meant for inference only.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(const ParameterStore* params = nullptr, bool record = true);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to parameter `index`. Repeated calls return the same node.
  Var param(std::size_t index);
  Var param(const std::string& name);

  /// Gradients of a scalar loss with respect to every parameter in the store.
  /// A graph can be differentiated once.
  Gradients backward(Var loss);

  bool recording() const noexcept { return record_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  // Op-author interface.
  Var push(Tensor value, const char* tag, BackwardFn fn = {});
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const char* tag(std::size_t id) const { return nodes_[id].tag; }
  /// Adjoint of node `id`, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.storage().empty(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    const char* tag = "";
  };

  const ParameterStore* params_;
  bool record_;
  bool differentiated_ = false;
  std::vector<Node> nodes_;
  std::vector<std::optional<std::size_t>> param_nodes_;
};

/// Row-block layout for batched masked self-attention. Each block is a
/// contiguous run of rows that attend among themselves under masks[mask].
struct AttentionLayout {
  struct Block {
    std::size_t offset;
    std::size_t size;
    std::size_t mask;
  };
  std::size_t heads = 1;
  std::vector<Block> blocks;
  std::vector<BinaryMask> masks;
};

/// CSR row groups: group g covers indices[offsets[g] .. offsets[g+1]).
struct RowGroups {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;

  std::size_t count() const noexcept { return offsets.size() - 1; }
  void add(std::initializer_list<std::size_t> rows);
  void add(const std::vector<std::size_t>& rows);
};

namespace ad {

Var matmul(Var a, Var b);
/// x * w + bias, bias broadcast over rows.
Var linear(Var x, Var w, Var bias);
Var add(Var a, Var b);
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var gelu(Var a);
Var tanh(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var masked_self_attention(Var q, Var k, Var v, std::shared_ptr<const AttentionLayout> layout);
Var gather_rows(Var x, std::vector<std::size_t> rows);
Var mean_rows(Var x, std::shared_ptr<const RowGroups> groups);
Var concat_rows(const std::vector<Var>& parts);
/// Same data viewed as [rows, cols]; the element count must match.
Var reshape(Var x, std::size_t rows, std::size_t cols);
/// Rows of `x` at positions where `replace[r]` is set are substituted by row 0
/// of `token` ([1, d]).
Var replace_rows(Var x, Var token, std::vector<std::uint8_t> replace);
/// weight * sum |pred - target| over entries where target is not NaN.
Var l1_loss(Var pred, const Tensor& target, double weight = 1.0);
/// weight * sum of softmax cross-entropy over rows with label >= 0.
Var cross_entropy(Var logits, const std::vector<int>& labels, double weight = 1.0);

}  // namespace ad

}  // namespace tcd
