#include "kdpos/eval.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "kdpos/error.hpp"
#include "kdpos/signal.hpp"

namespace fs = std::filesystem;

namespace kdpos::eval {

using distill::WindowDataset;

FoldPlan make_folds(const std::vector<SessionMeta>& sessions) {
  std::map<std::uint32_t, std::vector<std::uint32_t>> by_participant;
  for (const auto& s : sessions)
    by_participant[s.participant].push_back(s.session);

  FoldPlan plan;
  plan.folds.resize(5);
  std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>> full;
  for (auto& [p, ss] : by_participant) {
    std::sort(ss.begin(), ss.end());
    if (ss.size() > 5)
      throw input_error("plan error: participant " + std::to_string(p) +
                        " has " + std::to_string(ss.size()) +
                        " sessions (max 5)");
    if (ss.size() == 5)
      full.push_back({p, ss});
    else
      for (auto s : ss) plan.always_train.push_back({p, s});
  }
  if (full.empty())
    throw input_error("plan error: no participant has 5 sessions");

  for (std::size_t k = 0; k < 5; ++k) {
    auto& fold = plan.folds[k];
    for (const auto& [p, ss] : full) {
      for (std::size_t i = 0; i < 5; ++i) {
        if (i == k)
          fold.test.push_back({p, ss[i]});
        else
          fold.train.push_back({p, ss[i]});
      }
    }
    fold.train.insert(fold.train.end(), plan.always_train.begin(),
                      plan.always_train.end());
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.test.begin(), fold.test.end());
  }
  return plan;
}

void ConfusionMatrix::add(int truth, int pred) {
  if (truth < 1 || truth > 4 || pred < 1 || pred > 4)
    throw input_error("class out of range: truth=" + std::to_string(truth) +
                      " pred=" + std::to_string(pred));
  ++counts[std::size_t(truth - 1)][std::size_t(pred - 1)];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts)
    for (auto v : row) n += v;
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) counts[i][j] += o.counts[i][j];
  return *this;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                 const std::vector<int>& truths) {
  if (preds.size() != truths.size())
    throw input_error("preds and truths differ in length");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(truths[i], preds[i]);
  return cm;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw input_error("macro_f1 of an empty matrix");
  double sum = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    std::int64_t tp = cm.counts[c][c];
    std::int64_t row = 0, col = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      row += cm.counts[c][j];
      col += cm.counts[j][c];
    }
    double p = col ? double(tp) / double(col) : 0.0;
    double r = row ? double(tp) / double(row) : 0.0;
    sum += (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return sum / 4.0;
}

Aggregate10s aggregate_10s(const std::vector<WindowPred>& windows,
                           double segment_s, double window_s) {
  Aggregate10s out;
  if (windows.empty()) return out;
  for (std::size_t i = 1; i < windows.size(); ++i)
    if (windows[i].start_t < windows[i - 1].start_t)
      throw input_error("windows must be sorted by start time");

  const double t0 = windows.front().start_t;
  const double last_center =
      windows.back().start_t + window_s / 2.0;
  const std::size_t nseg = std::size_t((last_center - t0) / segment_s) + 1;

  std::vector<std::vector<const WindowPred*>> buckets(nseg);
  for (const auto& w : windows) {
    double center = w.start_t + window_s / 2.0;
    std::size_t k = std::size_t((center - t0) / segment_s);
    if (k < nseg) buckets[k].push_back(&w);
  }

  for (const auto& bucket : buckets) {
    if (bucket.empty()) {
      ++out.skipped;
      continue;
    }
    std::array<int, 5> votes{};
    std::array<int, 5> truth_votes{};
    std::array<double, 5> prob_sum{};
    for (const WindowPred* w : bucket) {
      ++votes[std::size_t(w->pred)];
      ++truth_votes[std::size_t(w->truth)];
      for (int c = 1; c <= 4; ++c)
        prob_sum[std::size_t(c)] += w->probs[std::size_t(c - 1)];
    }
    int best_votes = 0;
    for (int c = 1; c <= 4; ++c)
      best_votes = std::max(best_votes, votes[std::size_t(c)]);
    int pred = 0;
    double best_prob = -1.0;
    for (int c = 1; c <= 4; ++c) {
      if (votes[std::size_t(c)] != best_votes) continue;
      double mean_prob = prob_sum[std::size_t(c)] / double(bucket.size());
      if (mean_prob > best_prob) {
        best_prob = mean_prob;
        pred = c;
      }
    }
    int truth = 1;
    for (int c = 2; c <= 4; ++c)
      if (truth_votes[std::size_t(c)] > truth_votes[std::size_t(truth)])
        truth = c;
    out.segments.push_back({pred, truth});
  }
  return out;
}

ConfusionMatrix ExperimentReport::total_cm2(const std::string& model) const {
  ConfusionMatrix cm;
  for (const auto& f : per_fold.at(model)) cm += f.cm2;
  return cm;
}

ConfusionMatrix ExperimentReport::total_cm10(const std::string& model) const {
  ConfusionMatrix cm;
  for (const auto& f : per_fold.at(model)) cm += f.cm10;
  return cm;
}

std::vector<sim::SessionRecording> generate_cohort(
    const config::ExperimentConfig& cfg) {
  sim::FactoryMap map = sim::build_factory_map(cfg.map);
  std::vector<sim::SessionRecording> sessions;
  auto make = [&](std::uint32_t p, std::uint32_t s) {
    std::uint64_t seed = derive_seed(
        cfg.master_seed,
        "sim/p" + std::to_string(p) + "/s" + std::to_string(s));
    sessions.push_back(sim::generate_session(seed, map, cfg.cohort.plan,
                                             cfg.cohort.duration_s, cfg.radio,
                                             cfg.ultrasound, p, s));
  };
  for (int p = 1; p <= cfg.cohort.participants; ++p)
    for (int s = 1; s <= cfg.cohort.sessions_per_participant; ++s)
      make(std::uint32_t(p), std::uint32_t(s));
  for (int p = 0; p < cfg.cohort.short_participants; ++p)
    for (int s = 1; s <= cfg.cohort.short_sessions; ++s)
      make(std::uint32_t(cfg.cohort.participants + 1 + p), std::uint32_t(s));
  return sessions;
}

// ---------------------------------------------------------------------------

namespace {

using Scalar = float;  // training precision for experiment runs

WindowDataset gather(const WindowDataset& all,
                     const std::vector<std::size_t>& idx) {
  WindowDataset out;
  out.mode = all.mode;
  out.channels = all.channels;
  out.win_len = all.win_len;
  out.data.resize(idx.size() * all.channels * all.win_len);
  out.labels.resize(idx.size());
  out.prov.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(all.window(idx[i]), all.window(idx[i]) + all.channels * all.win_len,
              out.data.data() + i * all.channels * all.win_len);
    out.labels[i] = all.labels[idx[i]];
    out.prov[i] = all.prov[idx[i]];
  }
  return out;
}

std::vector<std::size_t> indices_of(const WindowDataset& all,
                                    const std::vector<SessionMeta>& metas) {
  std::set<SessionMeta> want(metas.begin(), metas.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (want.count({all.prov[i].participant, all.prov[i].session}))
      idx.push_back(i);
  return idx;
}

void write_history_csv(const distill::TrainHistory& h, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot write history: " + path);
  os << "epoch,train_loss,val_accuracy\n";
  char buf[64];
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,", e, h.train_loss[e]);
    os << buf;
    if (e < h.val_accuracy.size()) {
      std::snprintf(buf, sizeof buf, "%.17g", h.val_accuracy[e]);
      os << buf;
    }
    os << "\n";
  }
}

struct FoldOutput {
  std::map<std::string, ModelFoldResult> models;
  int skipped = 0;
};

// Evaluates one model on the fold's test sessions at both granularities.
template <class Model>
ModelFoldResult evaluate_model(Model& model, const WindowDataset& all,
                               const std::vector<SessionMeta>& test_sessions,
                               int* skipped) {
  ModelFoldResult res;
  for (const auto& meta : test_sessions) {
    auto idx = indices_of(all, {meta});
    WindowDataset session_ds = gather(all, idx);
    nn::Tensor<Scalar> logits = distill::predict_logits(model, session_ds);
    std::vector<WindowPred> preds(session_ds.size());
    for (std::size_t w = 0; w < session_ds.size(); ++w) {
      WindowPred& wp = preds[w];
      wp.start_t = session_ds.prov[w].start_t;
      wp.truth = session_ds.labels[w];
      const Scalar* z = logits.data() + w * nn::kNumClasses;
      // Softmax for the aggregation tie-break.
      double mx = z[0];
      for (std::size_t c = 1; c < 4; ++c) mx = std::max(mx, double(z[c]));
      double sum = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        wp.probs[c] = std::exp(double(z[c]) - mx);
        sum += wp.probs[c];
      }
      int arg = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        wp.probs[c] /= sum;
        if (wp.probs[c] > wp.probs[std::size_t(arg)]) arg = int(c);
      }
      wp.pred = arg + 1;
      res.cm2.add(wp.truth, wp.pred);
    }
    Aggregate10s agg = aggregate_10s(preds);
    *skipped += agg.skipped;
    for (const auto& seg : agg.segments) res.cm10.add(seg.truth, seg.pred);
  }
  res.f1_2s = macro_f1(res.cm2);
  res.f1_10s = macro_f1(res.cm10);
  return res;
}

FoldOutput run_fold(const config::ExperimentConfig& cfg,
                    const WindowDataset& all6, const FoldPlan::Fold& fold,
                    std::size_t fold_idx, const std::string& artifacts_dir) {
  const std::uint64_t master = cfg.master_seed;
  const std::string fp = "fold" + std::to_string(fold_idx);
  FoldOutput out;

  WindowDataset train6 = gather(all6, indices_of(all6, fold.train));
  WindowDataset train3 =
      train6.channel_slice(nn::kStudentChannels, distill::WindowMode::student);

  // Teacher.
  auto teacher =
      nn::build_teacher<Scalar>(derive_seed(master, fp + "/teacher/init"));
  {
    distill::TrainConfig tc = cfg.teacher_train;
    tc.seed = derive_seed(master, fp + "/teacher/train");
    distill::TrainHistory h = distill::train_teacher(teacher, train6, tc);
    ModelFoldResult res = evaluate_model(teacher, all6, fold.test, &out.skipped);
    res.history = std::move(h);
    out.models["teacher"] = std::move(res);
  }

  // Baseline and distilled students.
  for (int v = 1; v <= 3; ++v) {
    const std::string sv = "student" + std::to_string(v);
    auto student = nn::build_student<Scalar>(
        v, derive_seed(master, fp + "/" + sv + "/init"));
    distill::TrainConfig sc = cfg.student_train;
    sc.seed = derive_seed(master, fp + "/" + sv + "/train");
    distill::TrainHistory h = distill::train_baseline_student(student, train3, sc);
    ModelFoldResult res = evaluate_model(student, all6, fold.test, &out.skipped);
    res.history = std::move(h);
    out.models[sv] = std::move(res);

    const std::string dv = "distilled" + std::to_string(v);
    auto dist_student = nn::build_student<Scalar>(
        v, derive_seed(master, fp + "/" + dv + "/init"));
    distill::TrainHistory dh = distill::train_distilled_student(
        teacher, dist_student, train6, train3, cfg.kd,
        derive_seed(master, fp + "/" + dv + "/train"));
    ModelFoldResult dres =
        evaluate_model(dist_student, all6, fold.test, &out.skipped);
    dres.history = std::move(dh);
    out.models[dv] = std::move(dres);

    if (!artifacts_dir.empty()) {
      nn::save_checkpoint(student,
                          artifacts_dir + "/" + fp + "_" + sv + ".bspc");
      nn::save_checkpoint(dist_student,
                          artifacts_dir + "/" + fp + "_" + dv + ".bspc");
    }
  }

  if (!artifacts_dir.empty()) {
    nn::save_checkpoint(teacher, artifacts_dir + "/" + fp + "_teacher.bspc");
    for (const auto& [name, res] : out.models)
      write_history_csv(res.history,
                        artifacts_dir + "/" + fp + "_" + name + "_history.csv");
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const config::ExperimentConfig& cfg,
                                const WindowDataset& teacher_windows,
                                int jobs, const std::string& artifacts_dir) {
  if (teacher_windows.mode != distill::WindowMode::teacher)
    throw input_error("run_experiment needs a teacher-mode dataset");
  if (!artifacts_dir.empty()) fs::create_directories(artifacts_dir);

  std::vector<SessionMeta> metas;
  {
    std::set<SessionMeta> seen;
    for (const auto& p : teacher_windows.prov)
      if (seen.insert({p.participant, p.session}).second)
        metas.push_back({p.participant, p.session});
  }
  FoldPlan plan = make_folds(metas);

  if (jobs < 1) jobs = int(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  jobs = std::min<int>(jobs, int(plan.folds.size()));

  std::vector<FoldOutput> outputs(plan.folds.size());
  std::vector<std::string> errors(plan.folds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t f = next.fetch_add(1);
      if (f >= plan.folds.size()) return;
      try {
        outputs[f] = run_fold(cfg, teacher_windows, plan.folds[f], f,
                              artifacts_dir);
      } catch (const std::exception& e) {
        errors[f] = e.what();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t f = 0; f < errors.size(); ++f)
    if (!errors[f].empty())
      throw Error(ErrorKind::runtime,
                  "fold " + std::to_string(f) + " failed: " + errors[f]);

  ExperimentReport report;
  report.config_hash = cfg.config_hash;
  report.master_seed = cfg.master_seed;
  for (const auto& out : outputs) report.skipped_segments += out.skipped;
  report.model_names = {"teacher",    "student1",   "student2",  "student3",
                        "distilled1", "distilled2", "distilled3"};
  {
    auto t = nn::build_teacher<Scalar>(0);
    report.param_counts["teacher"] = t.param_count();
    for (int v = 1; v <= 3; ++v) {
      auto s = nn::build_student<Scalar>(v, 0);
      std::size_t n = s.param_count();
      report.param_counts["student" + std::to_string(v)] = n;
      report.param_counts["distilled" + std::to_string(v)] = n;
    }
  }
  for (const auto& name : report.model_names) {
    double sum2 = 0, sum10 = 0;
    for (auto& out : outputs) {
      report.per_fold[name].push_back(out.models.at(name));
      sum2 += report.per_fold[name].back().f1_2s;
      sum10 += report.per_fold[name].back().f1_10s;
    }
    report.mean_f1_2s[name] = sum2 / double(outputs.size());
    report.mean_f1_10s[name] = sum10 / double(outputs.size());
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {
nlohmann::ordered_json cm_to_json(const ConfusionMatrix& cm) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : cm.counts) {
    nlohmann::ordered_json r = nlohmann::ordered_json::array();
    for (auto v : row) r.push_back(v);
    rows.push_back(r);
  }
  return rows;
}

ConfusionMatrix cm_from_json(const nlohmann::json& j) {
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k)
      cm.counts[i][k] = j.at(i).at(k).get<std::int64_t>();
  return cm;
}
}  // namespace

void write_report_json(const ExperimentReport& report,
                       const std::string& path) {
  nlohmann::ordered_json j;
  j["config_hash"] = report.config_hash;
  j["master_seed"] = report.master_seed;
  j["skipped_segments"] = report.skipped_segments;
  nlohmann::ordered_json params;
  for (const auto& name : report.model_names)
    params[name] = report.param_counts.at(name);
  j["param_counts"] = params;

  nlohmann::ordered_json models;
  for (const auto& name : report.model_names) {
    nlohmann::ordered_json m;
    m["mean_f1_2s"] = report.mean_f1_2s.at(name);
    m["mean_f1_10s"] = report.mean_f1_10s.at(name);
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (const auto& fr : report.per_fold.at(name)) {
      nlohmann::ordered_json f;
      f["f1_2s"] = fr.f1_2s;
      f["f1_10s"] = fr.f1_10s;
      f["confusion_2s"] = cm_to_json(fr.cm2);
      f["confusion_10s"] = cm_to_json(fr.cm10);
      f["epochs_run"] = fr.history.epochs_run();
      f["best_epoch"] = fr.history.best_epoch;
      folds.push_back(f);
    }
    m["folds"] = folds;
    models[name] = m;
  }
  j["models"] = models;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw input_error("cannot write report: " + path);
  os << j.dump(2) << '\n';
}

ExperimentReport load_report_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw dependency_error("missing experiment report: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  ExperimentReport r;
  r.config_hash = j.value("config_hash", "");
  r.master_seed = j.value("master_seed", 0ull);
  r.skipped_segments = j.value("skipped_segments", 0);
  for (const auto& [name, n] : j.at("param_counts").items()) {
    r.param_counts[name] = n.get<std::size_t>();
  }
  for (const auto& [name, m] : j.at("models").items()) {
    r.model_names.push_back(name);
    r.mean_f1_2s[name] = m.at("mean_f1_2s").get<double>();
    r.mean_f1_10s[name] = m.at("mean_f1_10s").get<double>();
    for (const auto& f : m.at("folds")) {
      ModelFoldResult fr;
      fr.f1_2s = f.at("f1_2s").get<double>();
      fr.f1_10s = f.at("f1_10s").get<double>();
      fr.cm2 = cm_from_json(f.at("confusion_2s"));
      fr.cm10 = cm_from_json(f.at("confusion_10s"));
      r.per_fold[name].push_back(std::move(fr));
    }
  }
  return r;
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot write confusion matrix: " + path);
  os << "true\\pred,1,2,3,4\n";
  for (std::size_t i = 0; i < 4; ++i) {
    os << (i + 1);
    for (std::size_t j = 0; j < 4; ++j) os << ',' << cm.counts[i][j];
    os << '\n';
  }
}

void write_confusion_pgm(const ConfusionMatrix& cm, const std::string& path) {
  constexpr int kCell = 32;
  std::int64_t mx = 1;
  for (const auto& row : cm.counts)
    for (auto v : row) mx = std::max(mx, v);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw input_error("cannot write heatmap: " + path);
  os << "P5\n" << 4 * kCell << " " << 4 * kCell << "\n255\n";
  for (std::size_t i = 0; i < 4; ++i)
    for (int py = 0; py < kCell; ++py)
      for (std::size_t j = 0; j < 4; ++j) {
        unsigned char g = static_cast<unsigned char>(
            255.0 * (1.0 - double(cm.counts[i][j]) / double(mx)));
        for (int px = 0; px < kCell; ++px) os.put(char(g));
      }
}

}  // namespace kdpos::eval
