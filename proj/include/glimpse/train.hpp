#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "glimpse/errors.hpp"
#include "glimpse/model.hpp"
#include "glimpse/optim.hpp"

namespace glimpse {

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

// Rank of the target among the logits of one row, ties broken toward the
// lower class id (a tied lower id outranks the target).
inline int target_rank(const Tensor& logits, int row, int target) {
  const double lt = logits.at(row, target);
  int rank = 0;
  for (int j = 0; j < logits.cols(); ++j) {
    if (j == target) continue;
    const double lj = logits.at(row, j);
    if (lj > lt || (lj == lt && j < target)) ++rank;
  }
  return rank;
}

inline double top_k_accuracy(const Tensor& logits,
                             const std::vector<int>& targets, int k) {
  if (k < 1 || k > logits.cols())
    throw config_error("top-k with k=" + std::to_string(k) + " outside [1, " +
                       std::to_string(logits.cols()) + "]");
  if (static_cast<int>(targets.size()) != logits.rows())
    throw contract_error("top_k_accuracy: target count mismatch");
  if (targets.empty()) throw contract_error("top_k_accuracy: no samples");
  long hits = 0;
  for (int i = 0; i < logits.rows(); ++i)
    if (target_rank(logits, i, targets[i]) < k) ++hits;
  return static_cast<double>(hits) / targets.size();
}

// Unweighted mean, over classes with at least one ground-truth instance, of
// each class's fraction of instances ranked inside the top 5.
inline double class_mean_top5_recall(const Tensor& logits,
                                     const std::vector<int>& targets) {
  if (targets.empty()) throw contract_error("class recall: no samples");
  const int c = logits.cols();
  const int k = std::min(5, c);
  std::vector<long> instances(c, 0), hits(c, 0);
  for (int i = 0; i < logits.rows(); ++i) {
    ++instances[targets[i]];
    if (target_rank(logits, i, targets[i]) < k) ++hits[targets[i]];
  }
  double sum = 0.0;
  int present = 0;
  for (int j = 0; j < c; ++j) {
    if (instances[j] == 0) continue;
    sum += static_cast<double>(hits[j]) / instances[j];
    ++present;
  }
  return sum / present;
}

struct MetricsRecord {
  double top1 = 0.0;
  double top5 = 0.0;
  double recall5_class_mean = 0.0;
  std::vector<double> per_class_recall;  // -1 marks classes with no instances
  long samples = 0;
};

inline MetricsRecord compute_metrics(const Tensor& logits,
                                     const std::vector<int>& targets) {
  MetricsRecord rec;
  rec.samples = static_cast<long>(targets.size());
  const int c = logits.cols();
  const int k5 = std::min(5, c);
  rec.top1 = top_k_accuracy(logits, targets, 1);
  rec.top5 = top_k_accuracy(logits, targets, k5);
  std::vector<long> instances(c, 0), hits(c, 0);
  for (int i = 0; i < logits.rows(); ++i) {
    ++instances[targets[i]];
    if (target_rank(logits, i, targets[i]) < k5) ++hits[targets[i]];
  }
  rec.per_class_recall.assign(c, -1.0);
  double sum = 0.0;
  int present = 0;
  for (int j = 0; j < c; ++j) {
    if (instances[j] == 0) continue;
    rec.per_class_recall[j] = static_cast<double>(hits[j]) / instances[j];
    sum += rec.per_class_recall[j];
    ++present;
  }
  rec.recall5_class_mean = present ? sum / present : 0.0;
  return rec;
}

// ---------------------------------------------------------------------------
// Episode-level evaluation with deterministic fan-out.
// ---------------------------------------------------------------------------

inline int worker_count(int requested = 0) {
  int n = requested;
  if (n <= 0) {
    n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
  }
  if (const char* cap = std::getenv("GLIMPSE_THREADS")) {
    const int c = std::atoi(cap);
    if (c > 0) n = std::min(n, c);
  }
  return std::max(1, n);
}

struct EvalOutput {
  Tensor logits;  // all steps of all episodes, episode order
  std::vector<int> targets;
  MetricsRecord metrics;
};

// Per-episode results land in indexed slots and are concatenated in episode
// order, so the outcome is identical for any worker count.
inline EvalOutput evaluate_anticipation(const Model& m,
                                        const std::vector<Episode>& episodes,
                                        const HistorySource& source,
                                        int threads = 0) {
  if (episodes.empty()) throw data_error("evaluation split is empty");

  // an external history file is consumed sequentially across episodes
  std::vector<std::vector<std::vector<int>>> external_slices;
  std::vector<HistorySource> per_episode(episodes.size(), source);
  if (source.kind == HistorySource::Kind::external) {
    std::size_t offset = 0;
    external_slices.resize(episodes.size());
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      const std::size_t need = episodes[e].length() - 1;
      if (offset + need > source.external->size())
        throw data_error("external history ends after " +
                         std::to_string(source.external->size()) +
                         " steps; evaluation needs more");
      external_slices[e].assign(source.external->begin() + offset,
                                source.external->begin() + offset + need);
      per_episode[e].external = &external_slices[e];
      offset += need;
    }
  }

  std::vector<EpisodeResult> results(episodes.size());
  const int workers =
      std::min<int>(worker_count(threads), static_cast<int>(episodes.size()));
  if (workers <= 1) {
    for (std::size_t e = 0; e < episodes.size(); ++e)
      results[e] = anticipate_episode(m, episodes[e], per_episode[e]);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        while (true) {
          const std::size_t e = next.fetch_add(1);
          if (e >= episodes.size()) return;
          results[e] = anticipate_episode(m, episodes[e], per_episode[e]);
        }
      });
    for (auto& t : pool) t.join();
  }

  EvalOutput out;
  long total = 0;
  for (const auto& r : results) total += r.logits.rows();
  Tensor logits(static_cast<int>(total), m.cfg.class_count);
  long row = 0;
  for (const auto& r : results) {
    for (int i = 0; i < r.logits.rows(); ++i, ++row)
      for (int j = 0; j < m.cfg.class_count; ++j)
        logits.mut_at(static_cast<int>(row), j) = r.logits.at(i, j);
    out.targets.insert(out.targets.end(), r.targets.begin(), r.targets.end());
  }
  out.logits = logits;
  out.metrics = compute_metrics(out.logits, out.targets);
  return out;
}

// Recognition evaluation: self-feeding queue per episode, scored on the
// current action.
inline EvalOutput evaluate_recognition(const Model& m,
                                       const std::vector<Episode>& episodes,
                                       int threads = 0) {
  if (episodes.empty()) throw data_error("evaluation split is empty");
  std::vector<Tensor> per_ep_logits(episodes.size());
  std::vector<std::vector<int>> per_ep_targets(episodes.size());

  auto run_episode = [&](std::size_t e) {
    const Episode& ep = episodes[e];
    Tensor logits(ep.length(), m.cfg.class_count);
    HistoryQueue queue(m.cfg.history_len);
    for (int i = 0; i < ep.length(); ++i) {
      Sample frame = make_sample(m.cfg, ep, i, queue.snapshot(), ep.actions[i],
                                 ep.seed + i);
      const Tensor row = forward_sample(m, frame, Mode::infer);
      for (int j = 0; j < m.cfg.class_count; ++j)
        logits.mut_at(i, j) = row.at(0, j);
      queue.push_completed(argmax_row(row), m.vocab);
      per_ep_targets[e].push_back(ep.actions[i]);
    }
    per_ep_logits[e] = logits;
  };

  const int workers =
      std::min<int>(worker_count(threads), static_cast<int>(episodes.size()));
  if (workers <= 1) {
    for (std::size_t e = 0; e < episodes.size(); ++e) run_episode(e);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        while (true) {
          const std::size_t e = next.fetch_add(1);
          if (e >= episodes.size()) return;
          run_episode(e);
        }
      });
    for (auto& t : pool) t.join();
  }

  EvalOutput out;
  long total = 0;
  for (const auto& t : per_ep_logits) total += t.rows();
  Tensor logits(static_cast<int>(total), m.cfg.class_count);
  long row = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    for (int i = 0; i < per_ep_logits[e].rows(); ++i, ++row)
      for (int j = 0; j < m.cfg.class_count; ++j)
        logits.mut_at(static_cast<int>(row), j) = per_ep_logits[e].at(i, j);
    out.targets.insert(out.targets.end(), per_ep_targets[e].begin(),
                       per_ep_targets[e].end());
  }
  out.logits = logits;
  out.metrics = compute_metrics(out.logits, out.targets);
  return out;
}

inline EvalOutput evaluate_model(const Model& m,
                                 const std::vector<Episode>& episodes,
                                 const HistorySource& source, int threads = 0) {
  return m.cfg.task == Task::anticipate
             ? evaluate_anticipation(m, episodes, source, threads)
             : evaluate_recognition(m, episodes, threads);
}

// ---------------------------------------------------------------------------
// Early stopping.
// ---------------------------------------------------------------------------

// An epoch counts as an improvement when the metric beats the best-so-far
// by at least the threshold (the first epoch always counts). Training stops
// once `patience` consecutive epochs fail to improve.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double threshold)
      : patience_(patience), threshold_(threshold) {
    if (patience <= 0) throw config_error("patience must be positive");
  }

  bool observe(double metric) {
    ++epoch_;
    if (!seen_ || metric - best_ >= threshold_) {
      seen_ = true;
      best_ = metric;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_; }

 private:
  int patience_;
  double threshold_;
  bool seen_ = false;
  double best_ = 0.0;
  int best_epoch_ = 0;
  int stale_ = 0;
  int epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainSpec {
  int epochs = 100;
  int patience = 10;
  double improvement_threshold = 0.001;
  int batch_size = 32;
  double lr = 5e-5;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  enum class Monitor { top1, recall5 };
  Monitor monitor = Monitor::top1;

  void validate() const {
    if (epochs <= 0 || patience <= 0 || batch_size <= 0)
      throw config_error("epochs, patience and batch_size must be positive");
    if (patience > epochs)
      throw config_error("patience exceeds the epoch budget");
    if (lr <= 0.0 || weight_decay < 0.0 || improvement_threshold < 0.0)
      throw config_error("invalid optimizer settings");
  }
};

struct TrainResult {
  std::vector<double> val_history;  // monitored metric, one entry per epoch
  int best_epoch = 0;
  double best_metric = 0.0;
  int epochs_run = 0;
};

// AdamW over shuffled ground-truth-history batches; after each epoch the
// monitored validation metric drives early stopping, and the best epoch's
// parameters are restored at the end.
inline TrainResult train(Model& m, const std::vector<Episode>& train_eps,
                         const std::vector<Episode>& val_eps,
                         const TrainSpec& spec) {
  spec.validate();
  if (train_eps.empty() || val_eps.empty())
    throw data_error("training needs non-empty train and validation splits");

  std::vector<Sample> samples;
  for (const Episode& ep : train_eps) {
    auto s = episode_training_samples(m.cfg, ep);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  if (samples.empty()) throw data_error("training split produced no samples");

  AdamWConfig opt;
  opt.lr = spec.lr;
  opt.weight_decay = spec.weight_decay;

  EarlyStopping stopper(spec.patience, spec.improvement_threshold);
  TrainResult result;
  ParameterSet best = m.params.clone_values();

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    RngStream order_rng = RngStream::substream(spec.seed, "order", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<long>(i) - 1))]);
    RngStream corrupt_rng = RngStream::substream(spec.seed, "corruption", epoch);

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(spec.batch_size));
      std::vector<Sample> batch;
      std::vector<int> targets;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(samples[order[i]]);
        targets.push_back(samples[order[i]].target);
      }
      m.params.zero_grads();
      Tensor logits = forward_batch(m, batch, Mode::train, &corrupt_rng);
      Tensor loss = cross_entropy(logits, targets);
      backward(loss);
      adamw_step(m.params, opt);
    }

    const EvalOutput val = evaluate_model(m, val_eps, HistorySource::gt_source());
    const double metric = spec.monitor == TrainSpec::Monitor::top1
                              ? val.metrics.top1
                              : val.metrics.recall5_class_mean;
    result.val_history.push_back(metric);
    if (stopper.observe(metric)) best = m.params.clone_values();
    result.epochs_run = epoch;
    if (stopper.should_stop()) break;
  }

  m.params.load_values(best);
  result.best_epoch = stopper.best_epoch();
  result.best_metric = stopper.best_metric();
  return result;
}

// ---------------------------------------------------------------------------
// Modality-agreement meta-analysis.
// ---------------------------------------------------------------------------

struct AgreementBreakdown {
  long both_correct = 0;
  long visual_only = 0;
  long text_only = 0;
  long both_wrong = 0;

  long total() const {
    return both_correct + visual_only + text_only + both_wrong;
  }
  double pct(long cell) const {
    return total() ? 100.0 * cell / total() : 0.0;
  }
};

// Per-sample top-1 correctness of a visual-branch model versus a
// history-branch model on the same evaluation set.
inline AgreementBreakdown agreement_breakdown(
    const Model& visual_model, const Model& text_model,
    const std::vector<Episode>& episodes, const HistorySource& text_source,
    int threads = 0) {
  if (!(visual_model.vocab == text_model.vocab))
    throw config_error("agreement analysis needs models over one vocabulary");
  if (visual_model.cfg.modalities.ah)
    throw config_error("the visual branch model must not consume history");
  if (!text_model.cfg.modalities.ah)
    throw config_error("the text branch model must consume history");

  const EvalOutput v =
      evaluate_model(visual_model, episodes, HistorySource::gt_source(), threads);
  const EvalOutput t = evaluate_model(text_model, episodes, text_source, threads);
  if (v.targets != t.targets)
    throw contract_error("agreement models disagree on evaluation targets");

  AgreementBreakdown b;
  for (std::size_t i = 0; i < v.targets.size(); ++i) {
    const bool vc = argmax_row(v.logits, static_cast<int>(i)) == v.targets[i];
    const bool tc = argmax_row(t.logits, static_cast<int>(i)) == t.targets[i];
    if (vc && tc) ++b.both_correct;
    else if (vc) ++b.visual_only;
    else if (tc) ++b.text_only;
    else ++b.both_wrong;
  }
  return b;
}

}  // namespace glimpse
