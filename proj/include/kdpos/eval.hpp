#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kdpos/config.hpp"
#include "kdpos/distill.hpp"

namespace kdpos::eval {

struct SessionMeta {
  std::uint32_t participant = 0;
  std::uint32_t session = 0;

  auto operator<=>(const SessionMeta&) const = default;
};

// Leave-one-session-out plan: fold k tests the k-th session of every full
// (5-session) participant; participants with fewer sessions train everywhere.
struct FoldPlan {
  struct Fold {
    std::vector<SessionMeta> train;
    std::vector<SessionMeta> test;
  };
  std::vector<Fold> folds;
  std::vector<SessionMeta> always_train;
};

FoldPlan make_folds(const std::vector<SessionMeta>& sessions);

struct ConfusionMatrix {
  std::array<std::array<std::int64_t, 4>, 4> counts{};  // [true][pred]

  void add(int truth, int pred);
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
};

ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                 const std::vector<int>& truths);

// Unweighted mean over the 4 classes of 2PR/(P+R); classes with P+R = 0
// contribute 0.
double macro_f1(const ConfusionMatrix& cm);

struct WindowPred {
  double start_t = 0.0;
  std::array<double, 4> probs{};
  int pred = 0;   // 1..4
  int truth = 0;  // 1..4
};

struct SegmentOutcome {
  int pred = 0;
  int truth = 0;
};

struct Aggregate10s {
  std::vector<SegmentOutcome> segments;
  int skipped = 0;
};

// Majority vote of the 2 s window predictions whose centers fall in each
// consecutive 10 s segment; ties go to the tied class with the highest mean
// softmax probability. Windows must be sorted by start time.
Aggregate10s aggregate_10s(const std::vector<WindowPred>& windows,
                           double segment_s = 10.0, double window_s = 2.0);

struct ModelFoldResult {
  ConfusionMatrix cm2, cm10;
  double f1_2s = 0.0, f1_10s = 0.0;
  distill::TrainHistory history;
};

struct ExperimentReport {
  std::string config_hash;
  std::uint64_t master_seed = 0;
  std::vector<std::string> model_names;
  std::map<std::string, std::size_t> param_counts;
  std::map<std::string, std::vector<ModelFoldResult>> per_fold;
  std::map<std::string, double> mean_f1_2s;
  std::map<std::string, double> mean_f1_10s;
  int skipped_segments = 0;

  ConfusionMatrix total_cm2(const std::string& model) const;
  ConfusionMatrix total_cm10(const std::string& model) const;
};

// Simulates the configured cohort (full participants first, then the
// train-only short participants).
std::vector<sim::SessionRecording> generate_cohort(
    const config::ExperimentConfig& cfg);

// Full protocol on a preprocessed teacher-mode dataset: per fold trains the
// teacher, three baseline students and three distilled students, then
// evaluates all seven at 2 s and 10 s granularity. When artifacts_dir is
// non-empty, per-model history CSVs and checkpoints are written there.
ExperimentReport run_experiment(const config::ExperimentConfig& cfg,
                                const distill::WindowDataset& teacher_windows,
                                int jobs = 1,
                                const std::string& artifacts_dir = "");

void write_report_json(const ExperimentReport& report, const std::string& path);
ExperimentReport load_report_json(const std::string& path);

void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path);
void write_confusion_pgm(const ConfusionMatrix& cm, const std::string& path);

// Human-readable comparison table, including the published reference values
// (labeled non-comparable; they come from the original hardware dataset).
std::string render_report_table(const ExperimentReport& report);

}  // namespace kdpos::eval
