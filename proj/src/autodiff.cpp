#include "gochat/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace gochat {

int ParameterSet::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  params_.push_back(Parameter{name, Mat::Zero(rows, cols)});
  int slot = static_cast<int>(params_.size()) - 1;
  index_[name] = slot;
  return slot;
}

int ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterSet::init_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& p : params_)
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
}

void ParameterSet::set_zero() {
  for (auto& p : params_) p.value.setZero();
}

Vec ParameterSet::flatten() const {
  Vec flat(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index off = 0;
  for (const auto& p : params_) {
    flat.segment(off, p.value.size()) = Eigen::Map<const Vec>(p.value.data(), p.value.size());
    off += p.value.size();
  }
  return flat;
}

void ParameterSet::unflatten(const Vec& flat) {
  if (static_cast<std::size_t>(flat.size()) != scalar_count())
    throw std::invalid_argument("unflatten: size mismatch");
  Eigen::Index off = 0;
  for (auto& p : params_) {
    Eigen::Map<Vec>(p.value.data(), p.value.size()) = flat.segment(off, p.value.size());
    off += p.value.size();
  }
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      return false;
  }
  return true;
}

bool ParameterSet::identical(const ParameterSet& other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i].value;
    const auto& b = other.params_[i].value;
    if (std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) != 0) return false;
  }
  return true;
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (params_.size() != other.params_.size())
    throw std::invalid_argument("copy_values_from: slot count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].value.rows() != other.params_[i].value.rows() ||
        params_[i].value.cols() != other.params_[i].value.cols())
      throw std::invalid_argument("copy_values_from: shape mismatch at " + params_[i].name);
    params_[i].value = other.params_[i].value;
  }
}

Mat& Gradients::slot_for(const Parameter& p) {
  auto it = grads_.find(&p);
  if (it == grads_.end()) it = grads_.emplace(&p, Mat::Zero(p.value.rows(), p.value.cols())).first;
  return it->second;
}

const Mat* Gradients::find(const Parameter& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<Mat> Gradients::for_set(const ParameterSet& set) const {
  std::vector<Mat> out;
  out.reserve(set.size());
  for (const auto& p : set) {
    const Mat* g = find(p);
    out.push_back(g ? *g : Mat::Zero(p.value.rows(), p.value.cols()));
  }
  return out;
}

SetGradients zeros_like(const ParameterSet& set) {
  SetGradients g;
  g.reserve(set.size());
  for (const auto& p : set) g.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  return g;
}

void accumulate(SetGradients& into, const SetGradients& from, double scale) {
  if (into.size() != from.size()) throw std::invalid_argument("accumulate: slot count mismatch");
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += scale * from[i];
}

double squared_norm(const SetGradients& g) {
  double s = 0.0;
  for (const auto& m : g) s += m.squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------

Var Tape::push(Vec value, Backward fn) {
  values_.push_back(std::move(value));
  if (record_) backward_.push_back(std::move(fn));
  return Var{static_cast<int>(values_.size()) - 1};
}

Var Tape::input(Vec v) { return push(std::move(v), nullptr); }

Var Tape::scalar(double x) {
  Vec v(1);
  v(0) = x;
  return input(std::move(v));
}

Var Tape::param(const Parameter& p) {
  Vec v = Eigen::Map<const Vec>(p.value.data(), p.value.size());
  const Parameter* pp = &p;
  int id = size();
  return push(std::move(v), [pp, id](Tape& t) {
    Mat& g = t.grads_.slot_for(*pp);
    Eigen::Map<Vec>(g.data(), g.size()) += t.grad(id);
  });
}

Var Tape::row(const Parameter& table, int r) {
  if (r < 0 || r >= table.value.rows()) throw std::out_of_range("embedding row out of range");
  Vec v = table.value.row(r).transpose();
  const Parameter* pp = &table;
  int id = size();
  return push(std::move(v), [pp, id, r](Tape& t) {
    t.grads_.slot_for(*pp).row(r) += t.grad(id).transpose();
  });
}

Var Tape::matvec(const Parameter& w, Var x) {
  Vec v = w.value * value(x);
  const Parameter* pp = &w;
  int id = size();
  return push(std::move(v), [pp, id, x](Tape& t) {
    const Vec& g = t.grad(id);
    t.grads_.slot_for(*pp).noalias() += g * t.values_[x.id].transpose();
    t.grad(x.id).noalias() += pp->value.transpose() * g;
  });
}

Var Tape::matvec_t(const Parameter& w, Var x) {
  Vec v = w.value.transpose() * value(x);
  const Parameter* pp = &w;
  int id = size();
  return push(std::move(v), [pp, id, x](Tape& t) {
    const Vec& g = t.grad(id);
    t.grads_.slot_for(*pp).noalias() += t.values_[x.id] * g.transpose();
    t.grad(x.id).noalias() += pp->value * g;
  });
}

Var Tape::affine(const Parameter& w, const Parameter& b, Var x) {
  return add(matvec(w, x), param(b));
}

Var Tape::add(Var a, Var b) {
  Vec v = value(a) + value(b);
  int id = size();
  return push(std::move(v), [id, a, b](Tape& t) {
    t.grad(a.id) += t.grad(id);
    t.grad(b.id) += t.grad(id);
  });
}

Var Tape::sub(Var a, Var b) {
  Vec v = value(a) - value(b);
  int id = size();
  return push(std::move(v), [id, a, b](Tape& t) {
    t.grad(a.id) += t.grad(id);
    t.grad(b.id) -= t.grad(id);
  });
}

Var Tape::mul(Var a, Var b) {
  Vec v = value(a).cwiseProduct(value(b));
  int id = size();
  return push(std::move(v), [id, a, b](Tape& t) {
    const Vec& g = t.grad(id);
    t.grad(a.id) += g.cwiseProduct(t.values_[b.id]);
    t.grad(b.id) += g.cwiseProduct(t.values_[a.id]);
  });
}

Var Tape::scale(Var a, double s) {
  Vec v = value(a) * s;
  int id = size();
  return push(std::move(v), [id, a, s](Tape& t) { t.grad(a.id) += s * t.grad(id); });
}

Var Tape::one_minus(Var a) {
  Vec v = (1.0 - value(a).array()).matrix();
  int id = size();
  return push(std::move(v), [id, a](Tape& t) { t.grad(a.id) -= t.grad(id); });
}

Var Tape::sigmoid(Var a) {
  Vec v = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  int id = size();
  return push(std::move(v), [id, a](Tape& t) {
    const Vec& y = t.values_[id];
    t.grad(a.id).array() += t.grad(id).array() * y.array() * (1.0 - y.array());
  });
}

Var Tape::tanh(Var a) {
  Vec v = value(a).array().tanh().matrix();
  int id = size();
  return push(std::move(v), [id, a](Tape& t) {
    const Vec& y = t.values_[id];
    t.grad(a.id).array() += t.grad(id).array() * (1.0 - y.array().square());
  });
}

Var Tape::exp(Var a) {
  Vec v = value(a).array().exp().matrix();
  int id = size();
  return push(std::move(v), [id, a](Tape& t) {
    t.grad(a.id).array() += t.grad(id).array() * t.values_[id].array();
  });
}

Var Tape::square(Var a) {
  Vec v = value(a).array().square().matrix();
  int id = size();
  return push(std::move(v), [id, a](Tape& t) {
    t.grad(a.id).array() += 2.0 * t.grad(id).array() * t.values_[a.id].array();
  });
}

Var Tape::concat(std::span<const Var> parts) {
  Eigen::Index total = 0;
  for (Var p : parts) total += value(p).size();
  Vec v(total);
  Eigen::Index off = 0;
  for (Var p : parts) {
    v.segment(off, value(p).size()) = value(p);
    off += value(p).size();
  }
  int id = size();
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(v), [id, ids = std::move(ids)](Tape& t) {
    Eigen::Index o = 0;
    for (Var p : ids) {
      Eigen::Index n = t.values_[p.id].size();
      t.grad(p.id) += t.grad(id).segment(o, n);
      o += n;
    }
  });
}

Var Tape::concat(Var a, Var b) {
  const Var parts[2] = {a, b};
  return concat(std::span<const Var>(parts, 2));
}

Var Tape::slice(Var a, int start, int len) {
  if (start < 0 || len < 0 || start + len > value(a).size()) throw std::out_of_range("slice out of range");
  Vec v = value(a).segment(start, len);
  int id = size();
  return push(std::move(v), [id, a, start, len](Tape& t) {
    t.grad(a.id).segment(start, len) += t.grad(id);
  });
}

Var Tape::dot(Var a, Var b) {
  Vec v(1);
  v(0) = value(a).dot(value(b));
  int id = size();
  return push(std::move(v), [id, a, b](Tape& t) {
    double g = t.grad(id)(0);
    t.grad(a.id) += g * t.values_[b.id];
    t.grad(b.id) += g * t.values_[a.id];
  });
}

Var Tape::sum(Var a) {
  Vec v(1);
  v(0) = value(a).sum();
  int id = size();
  return push(std::move(v), [id, a](Tape& t) { t.grad(a.id).array() += t.grad(id)(0); });
}

Var Tape::pick(Var a, int i) {
  if (i < 0 || i >= value(a).size()) throw std::out_of_range("pick out of range");
  Vec v(1);
  v(0) = value(a)(i);
  int id = size();
  return push(std::move(v), [id, a, i](Tape& t) { t.grad(a.id)(i) += t.grad(id)(0); });
}

Var Tape::softmax(Var a) {
  const Vec& x = value(a);
  Vec v = (x.array() - x.maxCoeff()).exp().matrix();
  v /= v.sum();
  int id = size();
  return push(std::move(v), [id, a](Tape& t) {
    const Vec& y = t.values_[id];
    const Vec& g = t.grad(id);
    double gy = g.dot(y);
    t.grad(a.id).array() += y.array() * (g.array() - gy);
  });
}

Var Tape::log_softmax(Var a) {
  const Vec& x = value(a);
  double mx = x.maxCoeff();
  double lse = mx + std::log((x.array() - mx).exp().sum());
  Vec v = (x.array() - lse).matrix();
  int id = size();
  return push(std::move(v), [id, a](Tape& t) {
    const Vec& g = t.grad(id);
    Vec p = t.values_[id].array().exp().matrix();
    t.grad(a.id) += g - p * g.sum();
  });
}

Var Tape::log_floor(Var p, double floor) {
  const Vec& x = value(p);
  Vec v = x.cwiseMax(floor).array().log().matrix();
  int id = size();
  return push(std::move(v), [id, p, floor](Tape& t) {
    const Vec& x = t.values_[p.id];
    const Vec& g = t.grad(id);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x(i) > floor) t.grad(p.id)(i) += g(i) / x(i);
  });
}

Var Tape::weighted_sum(std::span<const Var> items, Var weights) {
  const Vec& w = value(weights);
  if (static_cast<Eigen::Index>(items.size()) != w.size() || items.empty())
    throw std::invalid_argument("weighted_sum: weight count mismatch");
  Vec v = Vec::Zero(value(items[0]).size());
  for (std::size_t i = 0; i < items.size(); ++i) v += w(static_cast<Eigen::Index>(i)) * value(items[i]);
  int id = size();
  std::vector<Var> ids(items.begin(), items.end());
  return push(std::move(v), [id, ids = std::move(ids), weights](Tape& t) {
    const Vec& g = t.grad(id);
    const Vec& w = t.values_[weights.id];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto k = static_cast<Eigen::Index>(i);
      t.grad(ids[i].id) += w(k) * g;
      t.grad(weights.id)(k) += g.dot(t.values_[ids[i].id]);
    }
  });
}

void Tape::backward(Var root, double seed) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (value(root).size() != 1) throw std::invalid_argument("backward root must be a scalar");
  grads_of_nodes_.resize(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i) grads_of_nodes_[i] = Vec::Zero(values_[i].size());
  grads_of_nodes_[root.id](0) = seed;
  for (int i = root.id; i >= 0; --i)
    if (backward_[i] && (grads_of_nodes_[i].array() != 0.0).any()) backward_[i](*this);
  grads_of_nodes_.clear();
}

}  // namespace gochat
