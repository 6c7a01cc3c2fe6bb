#pragma once

// Reverse-mode automatic differentiation over dense column vectors.
//
// A Tape records every operation of a forward pass. Parameters are read
// through const references and never mutated by the tape; their gradients are
// accumulated into a per-tape Gradients map, so any number of tapes may run
// concurrently against one frozen ParameterSet.

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gochat {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Mat value;
};

/// Ordered, named collection of trainable arrays. Order of insertion is the
/// serialization and flattening order.
class ParameterSet {
 public:
  ParameterSet() = default;

  /// Registers a zero-filled rows x cols array. Returns its slot index.
  int add(const std::string& name, int rows, int cols);

  Parameter& operator[](int slot) { return params_[slot]; }
  const Parameter& operator[](int slot) const { return params_[slot]; }

  int size() const { return static_cast<int>(params_.size()); }
  int find(const std::string& name) const;  // -1 when absent
  std::size_t scalar_count() const;

  void init_uniform(std::mt19937_64& rng, double lo, double hi);
  void set_zero();

  /// Flattened view in slot order, column-major within each array.
  Vec flatten() const;
  void unflatten(const Vec& flat);

  /// Shapes and names equal.
  bool same_layout(const ParameterSet& other) const;
  /// Bitwise equal values (and layout).
  bool identical(const ParameterSet& other) const;

  /// Copies values slot by slot; layouts must match but names may differ.
  void copy_values_from(const ParameterSet& other);

  std::vector<Parameter>::const_iterator begin() const { return params_.begin(); }
  std::vector<Parameter>::const_iterator end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, int> index_;
};

/// Gradient buffers keyed by parameter identity.
class Gradients {
 public:
  Mat& slot_for(const Parameter& p);
  const Mat* find(const Parameter& p) const;

  /// Dense per-slot gradients for `set` (zeros where nothing accumulated).
  std::vector<Mat> for_set(const ParameterSet& set) const;

  void clear() { grads_.clear(); }

 private:
  std::unordered_map<const Parameter*, Mat> grads_;
};

/// Per-slot gradient arrays aligned with one ParameterSet.
using SetGradients = std::vector<Mat>;

SetGradients zeros_like(const ParameterSet& set);
void accumulate(SetGradients& into, const SetGradients& from, double scale = 1.0);
double squared_norm(const SetGradients& g);

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  /// With record=false no backward closures are stored (inference only).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Vec v);
  Var scalar(double x);

  /// Whole parameter as a flattened column vector (biases, context vectors).
  Var param(const Parameter& p);
  /// Row `r` of an embedding table, as a column vector.
  Var row(const Parameter& table, int r);
  /// W x
  Var matvec(const Parameter& w, Var x);
  /// W^T x
  Var matvec_t(const Parameter& w, Var x);
  /// W x + b
  Var affine(const Parameter& w, const Parameter& b, Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var one_minus(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var square(Var a);

  Var concat(std::span<const Var> parts);
  Var concat(Var a, Var b);
  Var slice(Var a, int start, int len);

  Var dot(Var a, Var b);
  Var sum(Var a);
  Var pick(Var a, int i);

  Var softmax(Var a);
  Var log_softmax(Var a);
  /// log(max(p, floor)); gradient is zero where the floor is active.
  Var log_floor(Var p, double floor);

  /// Sum_i weights[i] * items[i]; weights has items.size() entries.
  Var weighted_sum(std::span<const Var> items, Var weights);

  const Vec& value(Var v) const { return values_[v.id]; }
  double scalar_value(Var v) const { return values_[v.id](0); }
  int size() const { return static_cast<int>(values_.size()); }
  bool recording() const { return record_; }

  /// Back-propagates d(root)/d(.) with root a 1-element node, scaled by seed.
  void backward(Var root, double seed = 1.0);

  const Gradients& gradients() const { return grads_; }
  Gradients& gradients() { return grads_; }

 private:
  using Backward = std::function<void(Tape&)>;

  Var push(Vec value, Backward fn);
  Vec& grad(int id) { return grads_of_nodes_[id]; }

  bool record_;
  std::vector<Vec> values_;
  std::vector<Backward> backward_;
  std::vector<Vec> grads_of_nodes_;
  Gradients grads_;
};

}  // namespace gochat
