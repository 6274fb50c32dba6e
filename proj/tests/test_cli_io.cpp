#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "survnma/cli_io.hpp"
#include "survnma/commands.hpp"
#include "toy_network.hpp"

using namespace survnma;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("survnma_test_cli_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string two_study_csv() {
  return "study,treatment,time,status,age\n"
         "S2,B,1.5,1,60\n"
         "S1,A,2.25,0,55\n"
         "S1,B,0.75,1,70\n"
         "S2,A,3,1,65\n"
         "S1,A,1.0,1,50\n"
         "S2,B,4,0,58\n";
}

}  // namespace

TEST_CASE("csv parser handles quoting, CRLF and BOM") {
  const auto t = parse_csv("\xEF\xBB\xBFname,note\r\n\"a,b\",\"say \"\"hi\"\"\"\r\nplain,\"multi\nline\"\r\n\r\n");
  REQUIRE(t.header == std::vector<std::string>{"name", "note"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "a,b");
  CHECK(t.rows[0][1] == "say \"hi\"");
  CHECK(t.rows[1][1] == "multi\nline");
  CHECK(t.row_lines == std::vector<int>{2, 3});
  CHECK(t.column("note") == 1);
  CHECK(t.column("absent") == -1);
}

TEST_CASE("csv parser reports line numbers") {
  CHECK_THROWS_WITH(parse_csv("a,b\n1,2\n3\n"), doctest::Contains("line 3"));
  CHECK_THROWS_WITH(parse_csv("a,b\n1,\"open\n"), doctest::Contains("unterminated"));
  CHECK_THROWS_WITH(parse_csv("a,b\n1,x\"y\n"), doctest::Contains("line 2"));
  CHECK_THROWS_WITH(parse_csv("a\n\"q\"z\n"), doctest::Contains("after a closing quote"));
  CHECK_THROWS(parse_csv(""));
}

TEST_CASE("csv writer quotes and round-trips through the parser") {
  CsvWriter w({"x", "y"});
  w.cell(std::string("comma, here")).cell(std::string("quote\"d"));
  w.end_row();
  w.cell(std::string("line\r\nbreak")).cell(0.1);
  w.end_row();
  CsvWriter short_row({"x", "y"});
  CHECK_THROWS_AS(short_row.cell(1).end_row(), std::logic_error);
  const auto t = parse_csv(w.str());
  CHECK(t.rows[0][0] == "comma, here");
  CHECK(t.rows[0][1] == "quote\"d");
  CHECK(t.rows[1][0] == "line\r\nbreak");
  CHECK(t.rows[1][1] == "0.1");
  CHECK(csv_field("plain") == "plain");
}

TEST_CASE("format_double is shortest and lossless") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 2000; ++i) {
    const double x = std::exp(u(rng)) * (i % 2 ? 1 : -1);
    CHECK(parse_double(format_double(x)) == x);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(3.0) == "3");
  CHECK(parse_double("+2.5") == 2.5);
  CHECK_THROWS(parse_double("1.2.3"));
  CHECK_THROWS(parse_double(""));
  CHECK(quantile_column(0.025) == "q2.5");
  CHECK(quantile_column(0.5) == "q50");
}

TEST_CASE("sha256 matches the FIPS 180-2 vectors") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("atomic_write replaces content and leaves no temp files") {
  const auto dir = scratch("atomic");
  atomic_write(dir / "sub" / "f.txt", "one");
  atomic_write(dir / "sub" / "f.txt", "two");
  CHECK(read_file(dir / "sub" / "f.txt") == "two");
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir / "sub")) {
    (void)e;
    ++n;
  }
  CHECK(n == 1);
}

TEST_CASE("ingest maps labels alphabetically with a reference override") {
  const auto t = parse_csv(two_study_csv());
  const auto a = ingest_csv(t);
  CHECK(a.data.study_labels() == std::vector<std::string>{"S1", "S2"});
  CHECK(a.data.treatment_labels() == std::vector<std::string>{"A", "B"});
  REQUIRE(a.notices.size() == 1);
  CHECK(a.notices[0].find("'A'") != std::string::npos);
  CHECK(a.data.covariate_names() == std::vector<std::string>{"age"});
  CHECK(a.data.num_studies() == 2);

  IngestOptions o;
  o.reference = "B";
  const auto b = ingest_csv(t, o);
  CHECK(b.data.treatment_labels() == std::vector<std::string>{"B", "A"});
  CHECK(b.notices.empty());
  o.reference = "Z";
  CHECK_THROWS_WITH(ingest_csv(t, o), doctest::Contains("does not appear"));

  // Stable: shuffled rows give the same id mapping.
  const auto c = ingest_csv(parse_csv("study,treatment,time,status,age\n"
                                      "S1,B,0.75,1,70\nS2,A,3,1,65\nS1,A,1.0,1,50\nS2,B,4,0,58\n"
                                      "S2,B,1.5,1,60\nS1,A,2.25,0,55\n"));
  CHECK(c.data.treatment_labels() == a.data.treatment_labels());
  CHECK(c.data.study_labels() == a.data.study_labels());
}

TEST_CASE("ingest rejects bad rows with their line numbers") {
  const std::string head = "study,treatment,time,status\nS1,A,1,1\nS1,B,2,0\n";
  CHECK_THROWS_WITH(ingest_csv(parse_csv(head + "S1,A,abc,1\n")), doctest::Contains("line 4"));
  CHECK_THROWS_WITH(ingest_csv(parse_csv(head + "S1,A,-1,1\n")), doctest::Contains("nonnegative"));
  CHECK_THROWS_WITH(ingest_csv(parse_csv(head + "S1,A,inf,1\n")), doctest::Contains("finite"));
  CHECK_THROWS_WITH(ingest_csv(parse_csv(head + "S1,A,1,2\n")), doctest::Contains("status must be 0"));
  CHECK_THROWS_WITH(ingest_csv(parse_csv(head + "S1,A,1,true\n")), doctest::Contains("status must be 0"));
  CHECK_THROWS_WITH(ingest_csv(parse_csv(head + "S1,A,,1\n")), doctest::Contains("missing time"));
  CHECK_THROWS_WITH(ingest_csv(parse_csv(head + "S1,A,0,1\n")), doctest::Contains("time 0"));
  CHECK_THROWS_WITH(ingest_csv(parse_csv("study,treatment,time\nS1,A,1\n")), doctest::Contains("'status'"));
}

TEST_CASE("ingest rejects structural problems") {
  // Single-arm study.
  CHECK_THROWS_WITH(ingest_csv(parse_csv("study,treatment,time,status\nS1,A,1,1\nS1,B,2,1\nS2,A,1,1\n")),
                    doctest::Contains("fewer than two arms"));
  // Disconnected: {A, B} and {C, D}.
  CHECK_THROWS_WITH(ingest_csv(parse_csv("study,treatment,time,status\nS1,A,1,1\nS1,B,2,1\nS2,C,1,1\nS2,D,1,0\n")),
                    doctest::Contains("disconnected"));
}

TEST_CASE("ingest is lossless") {
  const auto data = testing::toy_network(4, 10);
  const std::string csv = dataset_to_csv(data);
  const auto back = ingest_csv(parse_csv(csv)).data;
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back.record(i).time == data.record(i).time);
    CHECK(back.record(i).event == data.record(i).event);
  }
  CHECK(back.covariates() == data.covariates());
  CHECK(dataset_to_csv(back) == csv);
  const Json net = network_json(back);
  CHECK(net["arms"].size() == 7);
}

TEST_CASE("config parsing is strict and round-trips") {
  const Json j = Json::parse(R"({
    "model": {"family": "nph_coef", "effects": "random", "kappa": 3,
              "knots": {"internal": 4, "add": [{"time": 2.5}]},
              "covariates": {"prognostic": ["age"]}, "priors": {"tau_sd": 0.5}},
    "sampler": {"chains": 2, "warmup": 100, "sampling": 50, "seed": 9},
    "reference_treatment": "B",
    "prediction": {"grid_max": 10, "population": "S2", "covariates": {"age": 4}},
    "prior_predictive": {"variants": ["dirichlet"], "knots": {"internal": [1, 2], "upper": 4}}
  })");
  const RunConfig c = parse_config(j);
  CHECK(c.family == Family::CoefficientNph);
  CHECK(c.effects == Effects::Random);
  CHECK(c.kappa == 3);
  CHECK(c.knots.internal == 4);
  CHECK(c.knots.added.size() == 1);
  CHECK(c.priors.tau_sd == 0.5);
  CHECK(c.sampler.seed == 9);
  CHECK(c.reference_treatment == "B");
  CHECK(c.covariate_values.at("age") == 4.0);
  REQUIRE(c.prior_knots);
  CHECK(c.prior_knots->upper == 4.0);
  const RunConfig again = parse_config(config_to_json(c));
  CHECK(config_to_json(again) == config_to_json(c));

  CHECK_THROWS_WITH(parse_config(Json::parse(R"({"model": {"famly": "ph"}})")),
                    doctest::Contains("model.famly"));
  CHECK_THROWS_WITH(parse_config(Json::parse(R"({"sampler": {"chains": "four"}})")),
                    doctest::Contains("sampler.chains"));
  CHECK_THROWS(parse_config(Json::parse(R"({"model": {"family": "weibull"}})")));
  CHECK_THROWS(parse_config(Json::parse(R"({"model": {"kappa": 0}})")));
  CHECK_THROWS(parse_config(Json::parse(R"({"sampler": {"chains": 0}})")));
  CHECK_THROWS(parse_config(Json::parse(R"({"extra": 1})")));
}

TEST_CASE("build_spec applies knots and node-split labels") {
  const auto data = testing::toy_network(2, 15);
  RunConfig c;
  c.knots.internal = 2;
  c.knots.added.push_back({1.0, std::string("S1")});
  const auto spec = build_spec(c, data);
  CHECK(spec.knots.kind == KnotPlan::Kind::PerStudy);
  CHECK(spec.knots.for_study(0).num_internal() == 3);
  CHECK(spec.knots.for_study(1).num_internal() == 2);

  c.family = Family::CoefficientNph;
  CHECK_THROWS_WITH(build_spec(c, data), doctest::Contains("take no study"));
  c.knots.added.clear();
  CHECK(build_spec(c, data).knots.kind == KnotPlan::Kind::Common);
  c.knots.common = false;
  CHECK_THROWS(build_spec(c, data));

  RunConfig ns;
  ns.inconsistency = Inconsistency::NodeSplit;
  CHECK_THROWS_WITH(build_spec(ns, data), doctest::Contains("node_split"));
  ns.node_split = std::make_pair(std::string("A"), std::string("B"));
  const auto s = build_spec(ns, data);
  CHECK(s.split_a == 0);
  CHECK(s.split_b == 1);
}

TEST_CASE("draws persist losslessly") {
  PosteriorDraws d;
  d.names = {"a[1]", "b,c"};
  d.chains = 2;
  d.iterations = 3;
  d.draws.resize(6, 2);
  d.loglik.resize(6, 4);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (Eigen::Index i = 0; i < d.draws.size(); ++i) d.draws.data()[i] = n01(rng) * 1e-7;
  for (Eigen::Index i = 0; i < d.loglik.size(); ++i) d.loglik.data()[i] = n01(rng) * 100;
  d.lp = Eigen::VectorXd::LinSpaced(6, -3, 3);
  d.accept_stat = Eigen::VectorXd::Constant(6, 0.875);
  d.treedepth = Eigen::VectorXi::Constant(6, 3);
  d.n_leapfrog = Eigen::VectorXi::Constant(6, 7);
  d.divergent = Eigen::VectorXi::Zero(6);
  d.divergent[4] = 1;
  const auto dir = scratch("draws");
  atomic_write(dir / "draws.csv", draws_to_csv(d));
  atomic_write(dir / "loglik.csv", loglik_to_csv(d));
  const auto back = read_draws(dir / "draws.csv", d.names, dir / "loglik.csv");
  CHECK(back.chains == 2);
  CHECK(back.iterations == 3);
  CHECK(back.draws == d.draws);
  CHECK(back.loglik == d.loglik);
  CHECK(back.lp == d.lp);
  CHECK(back.divergent == d.divergent);
  CHECK_THROWS_WITH(read_draws(dir / "draws.csv", {"a[1]", "other"}), doctest::Contains("do not match"));
}

TEST_CASE("numeric text matrices round-trip bit-exactly") {
  Eigen::MatrixXd m(3, 2);
  m << 0.1, 1.0 / 3.0, -2e-300, 123456789.123456789, std::nextafter(1.0, 2.0), 5e-324;
  const auto back = matrix_from_text(matrix_to_text(m));
  CHECK((back.array() == m.array()).all());
  CHECK_THROWS(matrix_from_text("1 2\n3\n"));
}

TEST_CASE("manifests hash their inputs") {
  RunManifest m;
  m.command = "fit";
  m.config_sha256 = sha256_hex("c");
  m.data_sha256 = sha256_hex("d");
  m.data_path = "data.csv";
  m.seed = 4;
  m.knot_plan = Json::object();
  m.arguments = Json::object();
  m.outputs["draws.csv"] = sha256_hex("x");
  const auto id = m.run_id();
  CHECK(id.size() == 64);
  const auto back = RunManifest::from_json(m.to_json());
  CHECK(back.run_id() == id);
  CHECK(back.outputs == m.outputs);

  RunManifest other = m;
  other.seed = 5;
  CHECK(other.run_id() != id);
  other = m;
  other.data_path = "moved/data.csv";  // location does not determine outputs
  CHECK(other.run_id() == id);

  Json tampered = m.to_json();
  tampered["seed"] = 6;
  CHECK_THROWS_WITH(RunManifest::from_json(tampered), doctest::Contains("run_id"));
  CHECK_THROWS_WITH(read_manifest(scratch("nomanifest")), doctest::Contains("missing upstream artifact"));
}
