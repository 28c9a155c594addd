#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "glimpse/errors.hpp"
#include "glimpse/fusion.hpp"
#include "glimpse/history.hpp"
#include "glimpse/keyframe.hpp"
#include "glimpse/optim.hpp"
#include "glimpse/tensor.hpp"
#include "glimpse/world.hpp"

namespace glimpse {

struct Modalities {
  bool rgb = true;
  bool depth = true;
  bool ah = true;

  bool any() const { return rgb || depth || ah; }
  bool visual() const { return rgb || depth; }

  std::string str() const {
    std::string s;
    auto app = [&s](const char* m) {
      if (!s.empty()) s += ",";
      s += m;
    };
    if (rgb) app("rgb");
    if (depth) app("depth");
    if (ah) app("ah");
    return s;
  }

  static Modalities parse(const std::string& text) {
    Modalities m{false, false, false};
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok == "rgb")
        m.rgb = true;
      else if (tok == "depth")
        m.depth = true;
      else if (tok == "ah")
        m.ah = true;
      else if (!tok.empty())
        throw config_error("unknown modality '" + tok + "'");
    }
    return m;
  }
};

enum class KeyframePolicy { none, blur, l2, cosine };

inline std::string to_string(KeyframePolicy p) {
  switch (p) {
    case KeyframePolicy::none: return "none";
    case KeyframePolicy::blur: return "blur";
    case KeyframePolicy::l2: return "l2";
    case KeyframePolicy::cosine: return "cosine";
  }
  return "none";
}

inline KeyframePolicy keyframe_policy_from_string(const std::string& s) {
  if (s == "none") return KeyframePolicy::none;
  if (s == "blur") return KeyframePolicy::blur;
  if (s == "l2") return KeyframePolicy::l2;
  if (s == "cosine") return KeyframePolicy::cosine;
  throw config_error("unknown keyframe policy '" + s + "'");
}

enum class Task { anticipate, recognize };

inline std::string to_string(Task t) {
  return t == Task::anticipate ? "anticipate" : "recognize";
}

inline Task task_from_string(const std::string& s) {
  if (s == "anticipate") return Task::anticipate;
  if (s == "recognize") return Task::recognize;
  throw config_error("unknown task '" + s + "'");
}

enum class Mode { train, infer };

struct ModelConfig {
  int embed_dim = 768;
  int layers = 2;
  int heads = 4;
  int history_len = 7;
  int txt_dim = 768;
  int class_count = 33;
  Modalities modalities{};
  FusionVariant fusion = FusionVariant::bi_ca_gated;
  CorruptionSpec corruption{};
  KeyframePolicy keyframe = KeyframePolicy::blur;
  double keyframe_threshold = 100.0;
  Task task = Task::anticipate;
  bool visual_encoder_stack = false;
  bool scalar_gate = false;
  bool free_gate = false;
  bool history_bias = true;

  void validate() const {
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
      throw config_error("embed_dim " + std::to_string(embed_dim) +
                         " not divisible by heads " + std::to_string(heads));
    if (layers <= 0) throw config_error("layers must be positive");
    if (history_len <= 0 || txt_dim <= 0)
      throw config_error("history_len and txt_dim must be positive");
    if (class_count < 2) throw config_error("need at least 2 classes");
    if (!modalities.any()) throw config_error("at least one modality required");
    corruption.validate();
  }
};

// Key=value serialization; feeds both checkpoints and mismatch checks.
inline std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream out;
  out << "embed_dim=" << c.embed_dim << "\n";
  out << "layers=" << c.layers << "\n";
  out << "heads=" << c.heads << "\n";
  out << "history_len=" << c.history_len << "\n";
  out << "txt_dim=" << c.txt_dim << "\n";
  out << "class_count=" << c.class_count << "\n";
  out << "modalities=" << c.modalities.str() << "\n";
  out << "fusion=" << to_string(c.fusion) << "\n";
  out << "corruption=" << to_string(c.corruption.kind) << "\n";
  out << "corruption_p=" << c.corruption.p << "\n";
  out << "corruption_sigma=" << c.corruption.sigma << "\n";
  out << "keyframe=" << to_string(c.keyframe) << "\n";
  out << "keyframe_threshold=" << c.keyframe_threshold << "\n";
  out << "task=" << to_string(c.task) << "\n";
  out << "visual_encoder_stack=" << (c.visual_encoder_stack ? 1 : 0) << "\n";
  out << "scalar_gate=" << (c.scalar_gate ? 1 : 0) << "\n";
  out << "free_gate=" << (c.free_gate ? 1 : 0) << "\n";
  out << "history_bias=" << (c.history_bias ? 1 : 0) << "\n";
  return out.str();
}

inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("model config line " + std::to_string(line_no) +
                         ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "embed_dim") c.embed_dim = std::stoi(val);
      else if (key == "layers") c.layers = std::stoi(val);
      else if (key == "heads") c.heads = std::stoi(val);
      else if (key == "history_len") c.history_len = std::stoi(val);
      else if (key == "txt_dim") c.txt_dim = std::stoi(val);
      else if (key == "class_count") c.class_count = std::stoi(val);
      else if (key == "modalities") c.modalities = Modalities::parse(val);
      else if (key == "fusion") c.fusion = fusion_variant_from_string(val);
      else if (key == "corruption") c.corruption.kind = corruption_kind_from_string(val);
      else if (key == "corruption_p") c.corruption.p = std::stod(val);
      else if (key == "corruption_sigma") c.corruption.sigma = std::stod(val);
      else if (key == "keyframe") c.keyframe = keyframe_policy_from_string(val);
      else if (key == "keyframe_threshold") c.keyframe_threshold = std::stod(val);
      else if (key == "task") c.task = task_from_string(val);
      else if (key == "visual_encoder_stack") c.visual_encoder_stack = val == "1" || val == "true";
      else if (key == "scalar_gate") c.scalar_gate = val == "1" || val == "true";
      else if (key == "free_gate") c.free_gate = val == "1" || val == "true";
      else if (key == "history_bias") c.history_bias = val == "1" || val == "true";
      else throw config_error("unknown model config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw config_error("model config key '" + key + "': bad value '" + val + "'");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Model: configuration + parameters + frozen embedding table.
// ---------------------------------------------------------------------------

struct Model {
  ModelConfig cfg;
  ActionVocabulary vocab;
  EmbeddingTable embedding;
  ParameterSet params;

  std::optional<AttentionParams> visual_ca;       // standalone visual fusion
  std::vector<EncoderLayerParams> visual_layers;  // stacked wiring
  Tensor hist_w;
  std::optional<Tensor> hist_b;
  std::optional<FusionParams> fusion;
  Tensor head_w1, head_b1, head_w2, head_b2;
};

// The table stands in for precomputed text-encoder outputs, so it is a pure
// function of the action names.
inline std::uint64_t vocab_fingerprint(const ActionVocabulary& vocab) {
  std::uint64_t h = 1469598103934665603ull;
  for (const std::string& name : vocab.names()) {
    for (unsigned char ch : name) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    h ^= 0x3b;
    h *= 1099511628211ull;
  }
  return h;
}

inline Model build_model(const ModelConfig& cfg, const ActionVocabulary& vocab,
                         std::uint64_t seed) {
  cfg.validate();
  if (vocab.size() != cfg.class_count)
    throw config_error("vocabulary size " + std::to_string(vocab.size()) +
                       " does not match class_count " +
                       std::to_string(cfg.class_count));
  Model m;
  m.cfg = cfg;
  m.vocab = vocab;
  m.embedding =
      EmbeddingTable::synthetic(vocab.size(), cfg.txt_dim, vocab_fingerprint(vocab));

  RngStream rng = RngStream::substream(seed, "init");
  const int d = cfg.embed_dim;

  if (cfg.modalities.visual()) {
    const bool fused_visual = cfg.modalities.rgb && cfg.modalities.depth;
    if (cfg.visual_encoder_stack) {
      for (int l = 0; l < cfg.layers; ++l)
        m.visual_layers.push_back(make_encoder_layer(
            m.params, "visual.enc" + std::to_string(l), d, cfg.heads, rng));
    } else if (fused_visual) {
      m.visual_ca = make_attention_params(m.params, "visual.ca", d, cfg.heads, rng);
    }
  }

  if (cfg.modalities.ah) {
    m.hist_w = m.params.add("history.proj.w",
                            glorot(cfg.history_len * cfg.txt_dim, d, rng));
    if (cfg.history_bias)
      m.hist_b = m.params.add("history.proj.b",
                              Tensor::leaf(1, d, std::vector<double>(d, 0.0)));
  }

  const bool joint = cfg.modalities.ah && cfg.modalities.visual();
  if (joint)
    m.fusion = make_fusion_params(m.params, cfg.fusion, d, cfg.heads,
                                  cfg.scalar_gate, cfg.free_gate, rng);

  const int head_in = joint && fusion_doubles_width(cfg.fusion) ? 2 * d : d;
  const int hidden = 4 * d;
  m.head_w1 = m.params.add("head.w1", glorot(head_in, hidden, rng));
  m.head_b1 = m.params.add("head.b1",
                           Tensor::leaf(1, hidden, std::vector<double>(hidden, 0.0)));
  m.head_w2 = m.params.add("head.w2", glorot(hidden, cfg.class_count, rng));
  m.head_b2 = m.params.add(
      "head.b2", Tensor::leaf(1, cfg.class_count,
                              std::vector<double>(cfg.class_count, 0.0)));
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

struct Sample {
  Tensor rgb;                 // T×D token sequence, empty when absent
  Tensor depth;
  std::vector<int> history;   // completed-action queue content, oldest first
  int target = -1;
  std::uint64_t seed = 0;     // corruption substream when no shared stream given
};

struct ForwardStats {
  long corruption_events = 0;
};

inline Tensor forward_sample(const Model& m, const Sample& s, Mode mode,
                             RngStream* corrupt_rng = nullptr,
                             ForwardStats* stats = nullptr,
                             const Tensor* gate_override = nullptr) {
  const ModelConfig& cfg = m.cfg;
  if (s.rgb.empty() != !cfg.modalities.rgb)
    throw config_error(cfg.modalities.rgb ? "sample is missing rgb tokens"
                                          : "rgb tokens present but rgb not configured");
  if (s.depth.empty() != !cfg.modalities.depth)
    throw config_error(cfg.modalities.depth
                           ? "sample is missing depth tokens"
                           : "depth tokens present but depth not configured");

  // visual branch
  Tensor x_v;
  bool has_visual = false;
  if (cfg.modalities.rgb && cfg.modalities.depth) {
    if (cfg.visual_encoder_stack) {
      x_v = s.rgb;
      for (const auto& layer : m.visual_layers)
        x_v = encoder_block(x_v, s.depth, layer);
    } else {
      x_v = cross_attention(s.rgb, s.depth, *m.visual_ca);
    }
    has_visual = true;
  } else if (cfg.modalities.visual()) {
    x_v = cfg.modalities.rgb ? s.rgb : s.depth;
    if (cfg.visual_encoder_stack)
      for (const auto& layer : m.visual_layers) x_v = encoder_block(x_v, layer);
    has_visual = true;
  }

  // history branch
  Tensor x_t;
  bool has_text = false;
  if (cfg.modalities.ah) {
    HistoryQueue queue(cfg.history_len);
    queue.assign(s.history);
    const bool corrupting =
        mode == Mode::train && cfg.corruption.kind != CorruptionSpec::Kind::none &&
        (cfg.corruption.p > 0.0 ||
         (cfg.corruption.kind == CorruptionSpec::Kind::noise &&
          cfg.corruption.sigma > 0.0));
    RngStream local = RngStream::substream(s.seed, "corruption");
    RngStream* rng = corrupt_rng ? corrupt_rng : &local;
    if (corrupting && cfg.corruption.kind == CorruptionSpec::Kind::swap) {
      queue = corrupt_swap(queue, cfg.corruption.p, m.vocab, *rng);
      if (stats) ++stats->corruption_events;
    }
    Tensor embedded = embed_history(queue, m.embedding);
    if (corrupting && cfg.corruption.kind == CorruptionSpec::Kind::noise) {
      embedded = corrupt_noise(embedded, cfg.corruption.p, cfg.corruption.sigma, *rng);
      if (stats) ++stats->corruption_events;
    }
    x_t = project_history(embedded, m.hist_w, m.hist_b ? &*m.hist_b : nullptr);
    has_text = true;
  }

  Tensor fused;
  if (has_visual && has_text)
    fused = apply_fusion(*m.fusion, x_v, x_t, gate_override);
  else
    fused = has_visual ? x_v : x_t;
  if (fused.rows() > 1) fused = mean_rows(fused);

  Tensor hidden = gelu(add_rowvec(matmul(fused, m.head_w1), m.head_b1));
  return add_rowvec(matmul(hidden, m.head_w2), m.head_b2);
}

inline Tensor forward_batch(const Model& m, const std::vector<Sample>& batch,
                            Mode mode, RngStream* corrupt_rng = nullptr,
                            ForwardStats* stats = nullptr) {
  if (batch.empty()) throw contract_error("forward_batch: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const Sample& s : batch)
    rows.push_back(forward_sample(m, s, mode, corrupt_rng, stats));
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

// Mean cross-entropy with explicit label validation.
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<int>& targets) {
  for (int t : targets)
    if (t < 0 || t >= logits.cols())
      throw contract_error("label " + std::to_string(t) +
                           " outside class range [0, " +
                           std::to_string(logits.cols()) + ")");
  return cross_entropy_mean(logits, targets);
}

// Deterministic argmax; ties break toward the lower class id.
inline int argmax_row(const Tensor& logits, int row = 0) {
  int best = 0;
  for (int j = 1; j < logits.cols(); ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  return best;
}

// ---------------------------------------------------------------------------
// Keyframe application and episode walking.
// ---------------------------------------------------------------------------

inline int select_keyframe(const ModelConfig& cfg, const StepRecord& step) {
  const int newest = step.rgb_tokens.rows() - 1;
  switch (cfg.keyframe) {
    case KeyframePolicy::none:
      return newest;
    case KeyframePolicy::blur: {
      if (step.frames.empty())
        throw config_error("blur keyframe policy needs frames; dataset was "
                           "loaded without them");
      FrameWindow w{step.frames, std::nullopt};
      return select_blur(w, cfg.keyframe_threshold).index;
    }
    case KeyframePolicy::l2:
    case KeyframePolicy::cosine: {
      FrameWindow w{{}, step.rgb_tokens};
      w.frames.resize(step.rgb_tokens.rows());
      return select_centroid(w, cfg.keyframe == KeyframePolicy::l2
                                    ? CentroidMetric::l2
                                    : CentroidMetric::cosine);
    }
  }
  return newest;
}

namespace detail {

inline Tensor token_row(const Tensor& tokens, int row) {
  std::vector<double> v(tokens.cols());
  for (int j = 0; j < tokens.cols(); ++j) v[j] = tokens.at(row, j);
  return Tensor::row(std::move(v));
}

}  // namespace detail

// Builds the model-facing sample for one episode step: keyframe-selected
// tokens plus the given history queue content.
inline Sample make_sample(const ModelConfig& cfg, const Episode& ep, int step,
                          std::vector<int> history, int target,
                          std::uint64_t sample_seed) {
  const StepRecord& rec = ep.steps[step];
  const int idx = select_keyframe(cfg, rec);
  Sample s;
  if (cfg.modalities.rgb) s.rgb = detail::token_row(rec.rgb_tokens, idx);
  if (cfg.modalities.depth) s.depth = detail::token_row(rec.depth_tokens, idx);
  s.history = std::move(history);
  s.target = target;
  s.seed = sample_seed;
  return s;
}

// Ground-truth completed-action queue contents per step, current action
// included (the recognizer queue mechanism produces exactly this under a
// perfect recognizer).
inline std::vector<std::vector<int>> gt_history_states(const Episode& ep,
                                                       int capacity) {
  std::vector<std::vector<int>> states;
  states.reserve(ep.length());
  HistoryQueue q(capacity);
  for (int i = 0; i < ep.length(); ++i) {
    q.push_completed(ep.actions[i]);
    states.push_back(q.snapshot());
  }
  return states;
}

// Recognition on one frame: argmax prediction pushed onto the running
// queue. The queue the model sees is its own prediction history.
inline int recognize_step(const Model& m, const Sample& frame_sample,
                          HistoryQueue& queue) {
  if (m.cfg.task != Task::recognize)
    throw config_error("recognize_step requires a task=recognize model");
  Sample s = frame_sample;
  s.history = queue.snapshot();
  const Tensor logits = forward_sample(m, s, Mode::infer);
  const int pred = argmax_row(logits);
  queue.push_completed(pred, m.vocab);
  return pred;
}

struct HistorySource {
  enum class Kind { gt, recognizer, noisy_oracle, external };
  Kind kind = Kind::gt;
  const Model* recognizer = nullptr;                       // kind=recognizer
  double error_rate = 0.0;                                 // kind=noisy_oracle
  std::uint64_t seed = 0;
  const std::vector<std::vector<int>>* external = nullptr;  // kind=external

  static HistorySource gt_source() { return {}; }
  static HistorySource from_recognizer(const Model* rec) {
    HistorySource h;
    h.kind = Kind::recognizer;
    h.recognizer = rec;
    return h;
  }
  static HistorySource noisy(double error_rate, std::uint64_t seed) {
    HistorySource h;
    h.kind = Kind::noisy_oracle;
    h.error_rate = error_rate;
    h.seed = seed;
    return h;
  }
  static HistorySource from_file(const std::vector<std::vector<int>>* steps) {
    HistorySource h;
    h.kind = Kind::external;
    h.external = steps;
    return h;
  }
};

struct EpisodeResult {
  Tensor logits;             // (length−1)×C, one row per anticipation step
  std::vector<int> targets;  // next action at each step
};

// Walks an episode: keyframe selection, history construction from the
// configured source, inference-mode forward per step. The anticipation
// target at step i is the episode's action at i+1.
inline EpisodeResult anticipate_episode(const Model& m, const Episode& ep,
                                        const HistorySource& source) {
  if (m.cfg.task != Task::anticipate)
    throw config_error("anticipate_episode requires a task=anticipate model");
  if (source.kind == HistorySource::Kind::recognizer && !source.recognizer)
    throw config_error("predicted history requested but no recognizer given");
  if (source.kind == HistorySource::Kind::external && !source.external)
    throw config_error("external history requested but none supplied");

  const int steps = ep.length() - 1;
  if (steps <= 0) throw data_error("episode too short to anticipate");

  std::vector<std::vector<int>> gt;
  if (m.cfg.modalities.ah && source.kind == HistorySource::Kind::gt)
    gt = gt_history_states(ep, m.cfg.history_len);

  HistoryQueue running(m.cfg.history_len);
  RngStream oracle_rng = RngStream::substream(source.seed, "oracle", ep.seed);

  EpisodeResult out;
  out.targets.reserve(steps);
  Tensor logits(steps, m.cfg.class_count);
  for (int i = 0; i < steps; ++i) {
    std::vector<int> history;
    if (m.cfg.modalities.ah) {
      switch (source.kind) {
        case HistorySource::Kind::gt:
          history = gt[i];
          break;
        case HistorySource::Kind::recognizer: {
          Sample frame = make_sample(source.recognizer->cfg, ep, i, {}, -1, 0);
          recognize_step(*source.recognizer, frame, running);
          history = running.snapshot();
          break;
        }
        case HistorySource::Kind::noisy_oracle: {
          int observed = ep.actions[i];
          if (oracle_rng.bernoulli(source.error_rate)) {
            long alt = oracle_rng.uniform_int(0, m.vocab.size() - 2);
            if (alt >= observed) ++alt;
            observed = static_cast<int>(alt);
          }
          running.push_completed(observed, m.vocab);
          history = running.snapshot();
          break;
        }
        case HistorySource::Kind::external: {
          if (i >= static_cast<int>(source.external->size()))
            throw data_error("external history has " +
                             std::to_string(source.external->size()) +
                             " steps, episode needs " + std::to_string(steps));
          history = (*source.external)[i];
          break;
        }
      }
    }
    Sample s = make_sample(m.cfg, ep, i, std::move(history), ep.actions[i + 1],
                           ep.seed + i);
    const Tensor row = forward_sample(m, s, Mode::infer);
    for (int j = 0; j < m.cfg.class_count; ++j)
      logits.mut_at(i, j) = row.at(0, j);
    out.targets.push_back(ep.actions[i + 1]);
  }
  out.logits = logits;
  return out;
}

// Training samples for one episode under the model's task. Anticipation
// uses ground-truth histories (current action included); recognition uses
// the queue state before the current action.
inline std::vector<Sample> episode_training_samples(const ModelConfig& cfg,
                                                    const Episode& ep) {
  std::vector<Sample> samples;
  std::vector<std::vector<int>> gt;
  if (cfg.modalities.ah) gt = gt_history_states(ep, cfg.history_len);
  if (cfg.task == Task::anticipate) {
    for (int i = 0; i + 1 < ep.length(); ++i)
      samples.push_back(make_sample(cfg, ep, i,
                                    cfg.modalities.ah ? gt[i] : std::vector<int>{},
                                    ep.actions[i + 1], ep.seed + i));
  } else {
    for (int i = 0; i < ep.length(); ++i) {
      std::vector<int> hist;
      if (cfg.modalities.ah && i > 0) hist = gt[i - 1];
      samples.push_back(
          make_sample(cfg, ep, i, std::move(hist), ep.actions[i], ep.seed + i));
    }
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary container with a config echo and named
// parameter blobs. Loading rejects any config or shape mismatch.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Model& m, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw data_error("cannot write checkpoint '" + path + "'");
    out.write("GLCK", 4);
    detail::write_u32(out, kCheckpointVersion);
    const std::string cfg = serialize_model_config(m.cfg);
    detail::write_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(m.vocab.size()));
    for (const std::string& name : m.vocab.names()) {
      detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
    detail::write_u32(out, static_cast<std::uint32_t>(m.params.count()));
    for (const std::string& name : m.params.names()) {
      const Tensor& t = m.params.get(name);
      detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::write_u32(out, static_cast<std::uint32_t>(t.rows()));
      detail::write_u32(out, static_cast<std::uint32_t>(t.cols()));
      detail::write_f64s(out, t.values());
    }
    if (!out) throw data_error("short write on checkpoint '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw data_error("cannot finalize checkpoint '" + path + "'");
}

inline Model load_checkpoint(const std::string& path,
                             const ModelConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "GLCK")
    throw data_error("'" + path + "' is not a checkpoint");
  if (detail::read_u32(in, path) != kCheckpointVersion)
    throw data_error("unsupported checkpoint version in '" + path + "'");

  const auto cfg_len = detail::read_u32(in, path);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), cfg_len);
  if (!in) throw data_error("truncated checkpoint '" + path + "'");
  const ModelConfig cfg = parse_model_config(cfg_text);
  if (expected && serialize_model_config(*expected) != cfg_text)
    throw config_error("checkpoint '" + path +
                       "' was built with a different model configuration");

  const auto vocab_count = detail::read_u32(in, path);
  std::vector<std::string> names(vocab_count);
  for (auto& name : names) {
    const auto len = detail::read_u32(in, path);
    name.resize(len);
    in.read(name.data(), len);
    if (!in) throw data_error("truncated checkpoint '" + path + "'");
  }

  Model m = build_model(cfg, ActionVocabulary(std::move(names)), 0);
  const auto param_count = detail::read_u32(in, path);
  if (param_count != m.params.count())
    throw config_error("checkpoint '" + path + "' stores " +
                       std::to_string(param_count) + " parameters, model has " +
                       std::to_string(m.params.count()));
  for (std::uint32_t i = 0; i < param_count; ++i) {
    const auto len = detail::read_u32(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw data_error("truncated checkpoint '" + path + "'");
    if (!m.params.contains(name))
      throw config_error("checkpoint parameter '" + name +
                         "' does not exist in the configured model");
    Tensor& t = m.params.get(name);
    const int rows = static_cast<int>(detail::read_u32(in, path));
    const int cols = static_cast<int>(detail::read_u32(in, path));
    if (rows != t.rows() || cols != t.cols())
      throw config_error("checkpoint parameter '" + name + "' has shape " +
                         shape_str(rows, cols) + ", model expects " +
                         shape_str(t.rows(), t.cols()));
    t.mut_values() =
        detail::read_f64s(in, static_cast<std::size_t>(rows) * cols, path);
  }
  return m;
}

}  // namespace glimpse
