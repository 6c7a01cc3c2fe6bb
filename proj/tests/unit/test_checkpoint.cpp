#include "gochat/checkpoint.hpp"
#include "gochat/errors.hpp"
#include "gochat/manager_critic.hpp"
#include "gochat/rewards.hpp"
#include "gochat/simulator.hpp"
#include "gochat/worker_vhred.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gochat;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("gochat_ckpt_" + name); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// save -> load -> save must reproduce the file byte for byte.
template <class Model>
void check_resave(const Model& model, const std::string& name) {
  model.to_container().save(tmp(name + "_a"));
  Model back = Model::from_container(Container::load(tmp(name + "_a")));
  back.to_container().save(tmp(name + "_b"));
  CHECK(slurp(tmp(name + "_a")) == slurp(tmp(name + "_b")));
}

const HanConfig kHan{12, 4, 6, 3};

}  // namespace

TEST_CASE("container layout: magic, little-endian header length, JSON header") {
  Container c;
  c.meta["kind"] = "test";
  Mat m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  c.add("x", m);
  std::string bytes = c.to_bytes();
  CHECK(bytes.substr(0, 8) == "GOCHATC1");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  auto header = nlohmann::json::parse(bytes.substr(16, len));
  CHECK(header["version"] == 1);
  CHECK(header["meta"]["kind"] == "test");
  CHECK(header["arrays"][0]["rows"] == 2);
  CHECK(bytes.size() == 16 + len + 6 * sizeof(double));
  double first_col_second;
  std::memcpy(&first_col_second, bytes.data() + 16 + len + sizeof(double), sizeof(double));
  CHECK(first_col_second == 4.0);  // column-major

  Container back = Container::from_bytes(bytes);
  REQUIRE(back.find("x"));
  CHECK(*back.find("x") == m);
  CHECK(back.to_bytes() == bytes);
}

TEST_CASE("container rejects corrupt input") {
  Container c;
  c.add("x", Mat::Ones(2, 2));
  std::string bytes = c.to_bytes();
  CHECK_THROWS_AS(Container::from_bytes("NOTCKPT!" + bytes.substr(8)), ValidationError);
  CHECK_THROWS_AS(Container::from_bytes(bytes.substr(0, bytes.size() - 1)), ValidationError);
  CHECK_THROWS_AS(Container::from_bytes(bytes + "x"), ValidationError);
  CHECK_THROWS_AS(Container::load(tmp("does_not_exist")), MissingArtifactError);
  CHECK_THROWS(c.add("x", Mat::Ones(1, 1)));

  ParameterSet ps;
  ps.add("x", 3, 3);
  CHECK_THROWS_AS(c.restore_into(ps), ValidationError);
  ParameterSet other;
  other.add("y", 2, 2);
  CHECK_THROWS_AS(c.restore_into(other), ValidationError);
}

TEST_CASE("every model survives save/load bit-exactly and re-saves identically") {
  Manager m(kHan, 3);
  m.init(2);
  check_resave(m, "manager");
  CHECK(Manager::from_container(m.to_container()).params.identical(m.params));

  Critic c(kHan);
  c.init(3);
  gochat::testing::randomize(c.live.params, 5, 0.2);
  check_resave(c, "critic");
  Critic cb = Critic::from_container(c.to_container());
  CHECK(cb.live.params.identical(c.live.params));
  CHECK(cb.target.params.identical(c.target.params));

  Worker w(WorkerConfig{12, 2, 4, 5, 5, 3, 5, 6}, "worker");
  w.init(4);
  check_resave(w, "worker");
  CHECK(Worker::from_container(w.to_container()).params.identical(w.params));

  UserModel u(Worker(WorkerConfig{12, 0, 4, 5, 5, 3, 5, 6}, "user"));
  check_resave(u, "user");

  LearnedJudge j(kHan);
  j.init(6);
  check_resave(j, "judge");
  CHECK(LearnedJudge::from_container(j.to_container()).params.identical(j.params));

  CHECK_THROWS_AS(Manager::from_container(w.to_container()), ValidationError);
  CHECK_THROWS_AS(Worker::from_container(m.to_container()), ValidationError);
}

TEST_CASE("neighbor index and topic model re-save identically") {
  NeighborIndex idx(3, 2, 1, 1.0);
  Vec k1(3), k2(3);
  k1 << 1, 0, 0;
  k2 << 0, 1, 0;
  idx.add(k1, SubGoal::from_index(0, 2), TokenSeq::from_ids(std::vector<int>{4, 5}, 4));
  idx.add(k2, SubGoal::from_index(1, 2), TokenSeq::from_ids(std::vector<int>{6}, 4));
  idx.save(tmp("idx_a"), tmp("idx_a.jsonl"));
  NeighborIndex back = NeighborIndex::load(tmp("idx_a"), tmp("idx_a.jsonl"));
  CHECK(back == idx);
  back.save(tmp("idx_b"), tmp("idx_b.jsonl"));
  CHECK(slurp(tmp("idx_a")) == slurp(tmp("idx_b")));
  CHECK(slurp(tmp("idx_a.jsonl")) == slurp(tmp("idx_b.jsonl")));

  TopicModel tm;
  tm.K = 2;
  tm.alpha_doc = 0.1;
  tm.beta_word = 0.01;
  tm.seed = 3;
  tm.topic_word = Mat::Constant(2, 6, 1.0 / 6.0);
  tm.save(tmp("topics_a"));
  TopicModel::load(tmp("topics_a")).save(tmp("topics_b"));
  CHECK(slurp(tmp("topics_a")) == slurp(tmp("topics_b")));
}
