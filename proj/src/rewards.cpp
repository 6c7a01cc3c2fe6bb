#include "gochat/rewards.hpp"

#include "gochat/checkpoint.hpp"
#include "gochat/errors.hpp"
#include "gochat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace gochat {

double terminal_reward(Outcome outcome) { return outcome == Outcome::success ? 1.0 : -1.0; }

Vec mean_embedding_key(const Mat& embedding, const DialogueState& state) {
  if (state.history.empty()) throw std::invalid_argument("state key of an empty state");
  const TokenSeq* last = nullptr;
  for (auto it = state.history.rbegin(); it != state.history.rend(); ++it)
    if (it->speaker == Speaker::human) {
      last = &it->tokens;
      break;
    }
  Vec key = Vec::Zero(embedding.cols());
  if (!last || last->real_length == 0) {
    key = embedding.row(kUnk).transpose();
  } else {
    for (int id : last->real()) key += embedding.row(id).transpose();
    key /= static_cast<double>(last->real_length);
  }
  double n = key.norm();
  if (n > 0.0) key /= n;
  return key;
}

StateKeyFn make_state_key(const Worker& worker) {
  Mat table = worker.params[worker.embedding_slot()].value;
  return [table = std::move(table)](const DialogueState& s) { return mean_embedding_key(table, s); };
}

// ---------------------------------------------------------------------------

namespace kernels {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

namespace {

inline double distance_to_row(const double* row, double row_norm, int dim, const double* q, double q_norm) {
  if (row_norm == 0.0 || q_norm == 0.0) return 1.0;
  double dot = 0.0;
  for (int j = 0; j < dim; ++j) dot += row[j] * q[j];
  return 1.0 - dot / (q_norm * row_norm);
}

}  // namespace

void cosine_distances_serial(std::span<const double> keys, std::span<const double> norms, int dim,
                             std::span<const double> query, std::span<double> out) {
  const double qn = norm(query);
  const auto rows = static_cast<long>(norms.size());
  for (long i = 0; i < rows; ++i)
    out[static_cast<std::size_t>(i)] =
        distance_to_row(keys.data() + i * dim, norms[static_cast<std::size_t>(i)], dim, query.data(), qn);
}

void cosine_distances_parallel(std::span<const double> keys, std::span<const double> norms, int dim,
                               std::span<const double> query, std::span<double> out) {
  const double qn = norm(query);
  const auto rows = static_cast<long>(norms.size());
  const double* k = keys.data();
  const double* nr = norms.data();
  const double* q = query.data();
  double* o = out.data();
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) o[i] = distance_to_row(k + i * dim, nr[i], dim, q, qn);
}

}  // namespace kernels

// ---------------------------------------------------------------------------

NeighborIndex::NeighborIndex(int state_dim, int K, int k, double lambda)
    : dim_(state_dim + K), state_dim_(state_dim), K_(K), k_(k), lambda_(lambda) {
  if (k < 1) throw ValidationError("neighbor index: k must be >= 1");
  if (K < 1 || state_dim < 1) throw ValidationError("neighbor index: bad key dimensions");
}

Vec NeighborIndex::query_key(const Vec& state_key, const SubGoal& g) const {
  if (state_key.size() != state_dim_) throw std::invalid_argument("query_key: state key dimension mismatch");
  if (g.K != K_) throw std::invalid_argument("query_key: sub-goal dimension mismatch");
  Vec q(dim_);
  q << state_key, lambda_ * g.onehot();
  return q;
}

void NeighborIndex::add(const Vec& state_key, const SubGoal& g, TokenSeq reference) {
  Vec row = query_key(state_key, g);
  keys_.insert(keys_.end(), row.data(), row.data() + row.size());
  norms_.push_back(kernels::norm(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))));
  payload_.push_back(std::move(reference));
}

std::vector<int> NeighborIndex::nearest_rows(const Vec& query, int k, bool parallel) const {
  if (rows() == 0) throw std::logic_error("nearest_rows: empty index");
  if (k < 1 || k > rows()) throw std::out_of_range("nearest_rows: k exceeds row count");
  if (query.size() != dim_) throw std::invalid_argument("nearest_rows: query dimension mismatch");
  std::vector<double> dist(static_cast<std::size_t>(rows()));
  std::span<const double> q(query.data(), static_cast<std::size_t>(query.size()));
  if (parallel)
    kernels::cosine_distances_parallel(keys_, norms_, dim_, q, dist);
  else
    kernels::cosine_distances_serial(keys_, norms_, dim_, q, dist);

  std::vector<int> order(static_cast<std::size_t>(rows()));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    auto da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
    return da < db || (da == db && a < b);
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

void NeighborIndex::save(const std::filesystem::path& container, const std::filesystem::path& payload) const {
  Container c;
  c.meta["kind"] = "neighbor_index";
  c.meta["state_dim"] = state_dim_;
  c.meta["K"] = K_;
  c.meta["k"] = k_;
  c.meta["lambda"] = lambda_;
  c.meta["rows"] = rows();
  // stored as a (dim x rows) column-major array == our row-major layout
  Mat keys = Eigen::Map<const Mat>(keys_.data(), dim_, rows());
  c.add("index.keys", keys);
  c.save(container);

  std::ofstream out(payload, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + payload.string());
  for (const auto& p : payload_) {
    nlohmann::ordered_json j;
    j["n"] = p.capacity();
    j["ids"] = std::vector<int>(p.real().begin(), p.real().end());
    out << j.dump() << '\n';
  }
}

NeighborIndex NeighborIndex::load(const std::filesystem::path& container, const std::filesystem::path& payload) {
  Container c = Container::load(container);
  if (c.meta.value("kind", "") != "neighbor_index") throw ValidationError(container.string() + ": not an index");
  NeighborIndex idx(c.meta.at("state_dim").get<int>(), c.meta.at("K").get<int>(), c.meta.at("k").get<int>(),
                    c.meta.at("lambda").get<double>());
  const Mat* keys = c.find("index.keys");
  int rows = c.meta.at("rows").get<int>();
  if (!keys || keys->rows() != idx.dim_ || keys->cols() != rows)
    throw ValidationError(container.string() + ": bad key array");
  idx.keys_.assign(keys->data(), keys->data() + keys->size());
  for (int i = 0; i < rows; ++i)
    idx.norms_.push_back(kernels::norm(std::span<const double>(idx.keys_).subspan(
        static_cast<std::size_t>(i) * static_cast<std::size_t>(idx.dim_), static_cast<std::size_t>(idx.dim_))));

  std::ifstream in(payload, std::ios::binary);
  if (!in) throw MissingArtifactError(payload.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    auto ids = j.at("ids").get<std::vector<int>>();
    idx.payload_.push_back(TokenSeq::from_ids(ids, j.at("n").get<int>()));
  }
  if (idx.rows() != rows) throw ValidationError(payload.string() + ": payload row count mismatch");
  return idx;
}

NeighborIndex build_reference_index(const std::vector<LabeledPair>& pairs, const StateKeyFn& state_key, int k,
                                    double lambda) {
  if (pairs.empty()) throw ValidationError("build_reference_index: no labeled pairs");
  Vec first = state_key(pairs.front().state);
  NeighborIndex idx(static_cast<int>(first.size()), pairs.front().subgoal.K, k, lambda);
  for (const auto& p : pairs) idx.add(state_key(p.state), p.subgoal, p.target.tokens);
  return idx;
}

std::vector<TokenSeq> nearest_references(const NeighborIndex& index, const Vec& state_key, const SubGoal& g, int k) {
  std::vector<TokenSeq> out;
  for (int r : index.nearest_rows(index.query_key(state_key, g), k)) out.push_back(index.payload(r));
  return out;
}

WorkerReward worker_reward(const NeighborIndex& index, const Vec& state_key, const SubGoal& g,
                           const TokenSeq& generated, int k) {
  if (generated.real_length == 0) return {0.0, true};
  std::vector<int> cand(generated.real().begin(), generated.real().end());
  auto refs = nearest_references(index, state_key, g, k);
  double sum = 0.0;
  for (const auto& r : refs) sum += bleu(cand, std::vector<std::vector<int>>{{r.real().begin(), r.real().end()}});
  return {sum / static_cast<double>(refs.size()), false};
}

}  // namespace gochat
