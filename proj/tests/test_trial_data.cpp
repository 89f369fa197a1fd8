#include "smarttmle/trial_data.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace smarttmle;

namespace {

SubjectRecord full_record(std::string id, int a0, int y0, int y1, int a1) {
  SubjectRecord r;
  r.id = std::move(id);
  r.w0 = 0.3;
  r.y0 = y0;
  r.a0 = a0;
  r.c1 = true;
  r.w1 = 0.1;
  r.y1 = y1;
  r.a1 = a1;
  r.c2 = true;
  r.w2 = -0.2;
  r.y2 = 1;
  r.c3 = true;
  r.y3 = 0;
  return r;
}

}  // namespace

TEST_CASE("rule d branches") {
  CHECK(evaluate_rule_d(0, 5, 9) == 0);
  CHECK(evaluate_rule_d(1, 2, 0) == 1);
  CHECK(evaluate_rule_d(2, 2, 3) == 3);
  CHECK(evaluate_rule_d(1, 3, 3) == 3);  // boundary y1 == y0 with y1 != 0
  CHECK(evaluate_rule_d(1, 3, 2) == 1);
  CHECK(evaluate_rule_d(2, 3, 0) == 2);
  CHECK_THROWS_AS(evaluate_rule_d(4, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_rule_d(1, -1, 1), std::invalid_argument);
}

TEST_CASE("rule d range property") {
  std::mt19937 gen(7);
  std::uniform_int_distribution<int> arm(0, 2), count(0, 12);
  for (int trial = 0; trial < 2000; ++trial) {
    const int a0 = arm(gen), y0 = count(gen), y1 = count(gen);
    const int d = evaluate_rule_d(a0, y0, y1);
    CHECK(d >= 0);
    CHECK(d <= 3);
    if (d == 3) CHECK(a0 != 0);
    if (a0 != 0 && (y1 < y0 || y1 == 0)) CHECK(d == a0);
  }
}

TEST_CASE("follows_regime arm concordance") {
  const Regime ii = Regime::from_string("II");
  CHECK(follows_regime(full_record("a", 1, 2, 5, 3), ii, 1));
  CHECK_FALSE(follows_regime(full_record("b", 1, 2, 5, 1), ii, 1));
  CHECK_FALSE(follows_regime(full_record("c", 2, 2, 5, 3), ii, 0));

  const Regime iia = Regime::from_string("IIA");
  CHECK(follows_regime(full_record("d", 1, 2, 5, 1), iia, 1));
  CHECK_FALSE(follows_regime(full_record("e", 1, 2, 5, 3), iia, 1));

  const Regime i = Regime::from_string("I");
  CHECK(follows_regime(full_record("f", 0, 2, 5, 0), i, 1));
}

TEST_CASE("follows_regime stage-1 implies stage-0") {
  std::mt19937 gen(11);
  std::uniform_int_distribution<int> arm(0, 2), count(0, 6), pick(0, 4);
  const char* names[] = {"I", "II", "IIA", "III", "IIIA"};
  for (int trial = 0; trial < 500; ++trial) {
    const int a0 = arm(gen);
    const int y0 = count(gen), y1 = count(gen);
    int a1 = a0;
    if (a0 != 0 && y1 >= y0 && y1 != 0) a1 = (trial % 2) ? 3 : a0;
    if (a0 == 0) a1 = 0;
    auto rec = full_record("p", a0, y0, y1, a1);
    const Regime regime = Regime::from_string(names[pick(gen)]);
    if (follows_regime(rec, regime, 1)) CHECK(follows_regime(rec, regime, 0));
  }
}

TEST_CASE("table-1 regime mapping") {
  CHECK(Regime::from_string("I").stage0_arm == 0);
  CHECK_FALSE(Regime::from_string("I").step_up);
  CHECK(Regime::from_string("I").static_stage1_arm == 0);
  CHECK(Regime::from_string("II").stage0_arm == 1);
  CHECK(Regime::from_string("II").step_up);
  CHECK(Regime::from_string("IIA").static_stage1_arm == 1);
  CHECK(Regime::from_string("III").stage0_arm == 2);
  CHECK(Regime::from_string("III").step_up);
  CHECK(Regime::from_string("IIIA").static_stage1_arm == 2);
  CHECK(Regime::from_string("II").stage1_arm(2, 5) == 3);
  CHECK(Regime::from_string("IIA").stage1_arm(2, 5) == 1);
}

TEST_CASE("csv parse basic rows") {
  std::istringstream in(
      "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n"
      "s1,1,2,1,1,0.5,3,3,1,0.2,1,0,\n"
      "s2,0,1,0,0,,,,0,,,0,\n");
  const TrialDataset data = parse_dataset(in);
  REQUIRE(data.n() == 2);
  CHECK(data[0].c3 == false);
  CHECK_FALSE(data[0].y3.has_value());
  CHECK(data[0].a1 == 3);
  CHECK(data[1].a0 == 0);
  CHECK_FALSE(data[1].w1.has_value());
}

TEST_CASE("csv validation errors") {
  // y1 present although c1 = 0.
  std::istringstream bad1(
      "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n"
      "s1,1,2,1,0,,4,,0,,,0,\n");
  CHECK_THROWS_AS(parse_dataset(bad1), ValidationError);

  // Non-monotone missingness.
  std::istringstream bad2(
      "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n"
      "s1,1,2,1,0,,,,1,0.1,2,0,\n");
  CHECK_THROWS_AS(parse_dataset(bad2), ValidationError);

  // a1 inconsistent with the step-up protocol (improved but switched arm).
  std::istringstream bad3(
      "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n"
      "s1,1,5,1,1,0.5,2,3,0,,,0,\n");
  CHECK_THROWS_AS(parse_dataset(bad3), ValidationError);

  std::istringstream malformed(
      "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n"
      "s1,1,x,1,1,0.5,3,3,0,,,0,\n");
  CHECK_THROWS_AS(parse_dataset(malformed), ParseError);

  std::istringstream dup(
      "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n"
      "s1,1,2,0,0,,,,0,,,0,\n"
      "s1,1,2,0,0,,,,0,,,0,\n");
  CHECK_THROWS_AS(parse_dataset(dup), ValidationError);
}

TEST_CASE("empty file parses to n=0") {
  std::istringstream in("id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n");
  CHECK(parse_dataset(in).n() == 0);
}

TEST_CASE("monotone coercion flag") {
  std::istringstream in(
      "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n"
      "s1,1,2,1,0,,,,1,0.1,2,0,\n");
  DatasetOptions opts;
  opts.coerce_monotone = true;
  const TrialDataset data = parse_dataset(in, opts);
  CHECK_FALSE(data[0].c2);
  CHECK_FALSE(data[0].y2.has_value());
}

TEST_CASE("ingestion count cap") {
  std::istringstream in(
      "id,w0,y0,a0,c1,w1,y1,a1,c2,w2,y2,c3,y3\n"
      "s1,1,2000,0,0,,,,0,,,0,\n");
  CHECK_THROWS_AS(parse_dataset(in), ValidationError);
}

TEST_CASE("serialize-parse round trip") {
  std::mt19937 gen(42);
  std::uniform_int_distribution<int> arm(0, 2), count(0, 9);
  std::uniform_real_distribution<double> real(-2.0, 2.0);
  std::bernoulli_distribution coin(0.85);

  std::vector<SubjectRecord> records;
  for (int i = 0; i < 60; ++i) {
    SubjectRecord r;
    r.id = "s" + std::to_string(i);
    r.w0 = real(gen);
    r.y0 = count(gen);
    r.a0 = arm(gen);
    r.c1 = coin(gen);
    if (r.c1) {
      r.w1 = real(gen);
      r.y1 = count(gen);
      if (r.a0 == 0) {
        r.a1 = 0;
      } else if (*r.y1 >= r.y0 && *r.y1 != 0) {
        r.a1 = coin(gen) ? 3 : r.a0;
      } else {
        r.a1 = r.a0;
      }
      r.c2 = coin(gen);
    }
    if (r.c2) {
      r.w2 = real(gen);
      r.y2 = count(gen);
      r.c3 = coin(gen);
    }
    if (r.c3) r.y3 = count(gen);
    records.push_back(std::move(r));
  }
  const TrialDataset data(records);

  std::ostringstream out;
  serialize_dataset(data, out);
  std::istringstream in(out.str());
  const TrialDataset reparsed = parse_dataset(in);
  REQUIRE(reparsed.n() == data.n());
  for (Index i = 0; i < data.n(); ++i) {
    CHECK(reparsed[i].id == data[i].id);
    CHECK(reparsed[i].w0 == data[i].w0);
    CHECK(reparsed[i].y0 == data[i].y0);
    CHECK(reparsed[i].a0 == data[i].a0);
    CHECK(reparsed[i].c1 == data[i].c1);
    CHECK(reparsed[i].w1 == data[i].w1);
    CHECK(reparsed[i].y1 == data[i].y1);
    CHECK(reparsed[i].a1 == data[i].a1);
    CHECK(reparsed[i].c2 == data[i].c2);
    CHECK(reparsed[i].w2 == data[i].w2);
    CHECK(reparsed[i].y2 == data[i].y2);
    CHECK(reparsed[i].c3 == data[i].c3);
    CHECK(reparsed[i].y3 == data[i].y3);
  }

  std::ostringstream out2;
  serialize_dataset(reparsed, out2);
  CHECK(out.str() == out2.str());
}
