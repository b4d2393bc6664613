#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "kdpos/eval.hpp"
#include "kdpos/signal.hpp"

using namespace kdpos;
using namespace kdpos::eval;

TEST_CASE("make_folds reproduces the leave-one-session-out structure") {
  // Ten full participants and two short ones (3 and 4 sessions).
  std::vector<SessionMeta> sessions;
  for (std::uint32_t p = 1; p <= 10; ++p)
    for (std::uint32_t s = 1; s <= 5; ++s) sessions.push_back({p, s});
  for (std::uint32_t s = 1; s <= 3; ++s) sessions.push_back({11, s});
  for (std::uint32_t s = 1; s <= 4; ++s) sessions.push_back({12, s});

  FoldPlan plan = make_folds(sessions);
  REQUIRE(plan.folds.size() == 5);
  CHECK(plan.always_train.size() == 7);

  for (std::size_t k = 0; k < 5; ++k) {
    const auto& fold = plan.folds[k];
    CHECK(fold.test.size() == 10);  // one session per full participant
    CHECK(fold.train.size() == 40 + 7);
    // Short participants never appear in a test set.
    for (const auto& m : fold.test) CHECK(m.participant <= 10);
    // Test sessions are session k of each participant.
    for (const auto& m : fold.test) CHECK(m.session == k + 1);
  }

  // Test sets are disjoint across folds.
  std::set<std::pair<unsigned, unsigned>> seen;
  for (const auto& fold : plan.folds)
    for (const auto& m : fold.test)
      CHECK(seen.insert({m.participant, m.session}).second);

  // No session is in both train and test of one fold.
  for (const auto& fold : plan.folds) {
    std::set<std::pair<unsigned, unsigned>> train_set;
    for (const auto& m : fold.train) train_set.insert({m.participant, m.session});
    for (const auto& m : fold.test)
      CHECK(train_set.count({m.participant, m.session}) == 0);
  }
}

TEST_CASE("make_folds handles a single participant and rejects >5 sessions") {
  std::vector<SessionMeta> one;
  for (std::uint32_t s = 1; s <= 5; ++s) one.push_back({1, s});
  FoldPlan plan = make_folds(one);
  for (const auto& fold : plan.folds) {
    CHECK(fold.train.size() == 4);
    CHECK(fold.test.size() == 1);
  }

  std::vector<SessionMeta> bad = one;
  bad.push_back({1, 6});
  CHECK_THROWS_WITH_AS(make_folds(bad), doctest::Contains("plan error"), Error);

  // A 3-session participant alone cannot form folds.
  std::vector<SessionMeta> shorties = {{1, 1}, {1, 2}, {1, 3}};
  CHECK_THROWS_WITH_AS(make_folds(shorties), doctest::Contains("plan error"),
                       Error);
}

TEST_CASE("confusion matrix examples") {
  ConfusionMatrix diag = confusion_matrix({1, 2, 3, 4}, {1, 2, 3, 4});
  for (int c = 0; c < 4; ++c) CHECK(diag.counts[c][c] == 1);
  CHECK(diag.total() == 4);
  CHECK(macro_f1(diag) == doctest::Approx(1.0));

  // Always predict class 1 on balanced truths: first column full.
  ConfusionMatrix col = confusion_matrix({1, 1, 1, 1}, {1, 2, 3, 4});
  for (int c = 0; c < 4; ++c) {
    CHECK(col.counts[c][0] == 1);
    for (int j = 1; j < 4; ++j) CHECK(col.counts[c][j] == 0);
  }
  // Macro F1 = (0.4 + 0 + 0 + 0) / 4.
  CHECK(macro_f1(col) == doctest::Approx(0.1).epsilon(1e-12));

  ConfusionMatrix empty;
  CHECK(empty.total() == 0);
  CHECK_THROWS_AS(macro_f1(empty), Error);
  CHECK_THROWS_AS(confusion_matrix({5}, {1}), Error);
  CHECK_THROWS_AS(confusion_matrix({1, 2}, {1}), Error);
}

TEST_CASE("aggregate_10s majority voting and tie handling") {
  auto window = [](double t, int pred, int truth,
                   std::array<double, 4> probs) {
    WindowPred w;
    w.start_t = t;
    w.pred = pred;
    w.truth = truth;
    w.probs = probs;
    return w;
  };

  SUBCASE("unanimous windows aggregate to the same class") {
    std::vector<WindowPred> ws;
    for (int i = 0; i < 19; ++i)
      ws.push_back(window(0.5 * i, 2, 2, {0.1, 0.7, 0.1, 0.1}));
    Aggregate10s agg = aggregate_10s(ws);
    REQUIRE(!agg.segments.empty());
    for (const auto& seg : agg.segments) {
      CHECK(seg.pred == 2);
      CHECK(seg.truth == 2);
    }
  }

  SUBCASE("3 votes beat 2 votes") {
    std::vector<WindowPred> ws;
    ws.push_back(window(0.0, 1, 1, {0.9, 0.0, 0.1, 0.0}));
    ws.push_back(window(0.5, 1, 1, {0.9, 0.0, 0.1, 0.0}));
    ws.push_back(window(1.0, 1, 1, {0.9, 0.0, 0.1, 0.0}));
    ws.push_back(window(1.5, 3, 1, {0.1, 0.0, 0.9, 0.0}));
    ws.push_back(window(2.0, 3, 1, {0.1, 0.0, 0.9, 0.0}));
    Aggregate10s agg = aggregate_10s(ws);
    REQUIRE(agg.segments.size() == 1);
    CHECK(agg.segments[0].pred == 1);
  }

  SUBCASE("2-2 ties break by mean probability") {
    std::vector<WindowPred> ws;
    ws.push_back(window(0.0, 1, 1, {0.6, 0.0, 0.4, 0.0}));
    ws.push_back(window(0.5, 1, 1, {0.6, 0.0, 0.4, 0.0}));
    ws.push_back(window(1.0, 3, 1, {0.5, 0.0, 0.5, 0.0}));
    ws.push_back(window(1.5, 3, 1, {0.5, 0.0, 0.5, 0.0}));
    Aggregate10s agg = aggregate_10s(ws);
    REQUIRE(agg.segments.size() == 1);
    // Mean prob of class 1 = 0.55 beats class 3 = 0.45.
    CHECK(agg.segments[0].pred == 1);
  }

  SUBCASE("segments without windows are skipped and counted") {
    std::vector<WindowPred> ws;
    ws.push_back(window(0.0, 1, 1, {1, 0, 0, 0}));
    ws.push_back(window(25.0, 2, 2, {0, 1, 0, 0}));  // two empty segments between
    Aggregate10s agg = aggregate_10s(ws);
    CHECK(agg.skipped == 1);
    REQUIRE(agg.segments.size() == 2);
  }
}

TEST_CASE("run_experiment produces a complete deterministic report") {
  config::ExperimentConfig cfg = config::default_experiment_config();
  cfg.cohort.participants = 1;
  cfg.cohort.duration_s = 60.0;
  cfg.master_seed = 404;
  cfg.teacher_train.epochs = 2;
  cfg.teacher_train.batch_size = 16;
  cfg.student_train.epochs = 2;
  cfg.student_train.batch_size = 16;
  cfg.kd.epochs = 1;
  cfg.kd.batch_size = 16;

  auto sessions = generate_cohort(cfg);
  REQUIRE(sessions.size() == 5);
  distill::WindowDataset all;
  for (const auto& rec : sessions)
    all.append(signal::preprocess_session(rec, signal::WindowMode::teacher));
  all.mode = signal::WindowMode::teacher;

  ExperimentReport report = run_experiment(cfg, all, 1);
  REQUIRE(report.model_names.size() == 7);
  for (const auto& name : report.model_names) {
    REQUIRE(report.per_fold.at(name).size() == 5);
    // Averaged F1 equals the mean of the fold F1 values.
    double sum2 = 0, sum10 = 0;
    std::int64_t windows = 0;
    for (const auto& fr : report.per_fold.at(name)) {
      sum2 += fr.f1_2s;
      sum10 += fr.f1_10s;
      windows += fr.cm2.total();
    }
    CHECK(report.mean_f1_2s.at(name) ==
          doctest::Approx(sum2 / 5.0).epsilon(1e-9));
    CHECK(report.mean_f1_10s.at(name) ==
          doctest::Approx(sum10 / 5.0).epsilon(1e-9));
    // Confusion totals count every test window exactly once.
    CHECK(windows == std::int64_t(all.size()));
  }
  CHECK(report.param_counts.at("teacher") == 38296);
  CHECK(report.param_counts.at("student1") == 754);

  // Determinism: the same config and seed give identical report bytes.
  ExperimentReport again = run_experiment(cfg, all, 1);
  write_report_json(report, "/tmp/kdpos_report_a.json");
  write_report_json(again, "/tmp/kdpos_report_b.json");
  std::ifstream fa("/tmp/kdpos_report_a.json"), fb("/tmp/kdpos_report_b.json");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(!sa.str().empty());

  // Round-trip through the json loader.
  ExperimentReport loaded = load_report_json("/tmp/kdpos_report_a.json");
  CHECK(loaded.mean_f1_2s.at("teacher") ==
        doctest::Approx(report.mean_f1_2s.at("teacher")).epsilon(1e-12));
  CHECK(loaded.per_fold.at("teacher").size() == 5);

  // Rendered table includes the reference rows.
  std::string table = render_report_table(report);
  CHECK(table.find("79.85") != std::string::npos);
  CHECK(table.find("84.41") != std::string::npos);
  CHECK(table.find("70.96") != std::string::npos);
  CHECK(table.find("76.04") != std::string::npos);
  CHECK(table.find("NOT comparable") != std::string::npos);
}

TEST_CASE("confusion outputs are written") {
  ConfusionMatrix cm = confusion_matrix({1, 2, 2, 4}, {1, 2, 3, 4});
  write_confusion_csv(cm, "/tmp/kdpos_cm.csv");
  write_confusion_pgm(cm, "/tmp/kdpos_cm.pgm");
  std::ifstream csv("/tmp/kdpos_cm.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header.find("pred") != std::string::npos);
  std::ifstream pgm("/tmp/kdpos_cm.pgm", std::ios::binary);
  std::string magic(2, '\0');
  pgm.read(magic.data(), 2);
  CHECK(magic == "P5");
}
