#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "glimpse/errors.hpp"
#include "glimpse/history.hpp"
#include "glimpse/keyframe.hpp"
#include "glimpse/rng.hpp"
#include "glimpse/tensor.hpp"

namespace glimpse {

// ---------------------------------------------------------------------------
// Task graphs: directed stochastic graphs over actions whose walks define
// valid activity sequences.
// ---------------------------------------------------------------------------

struct TaskGraph {
  struct Edge {
    int to = 0;
    double prob = 0.0;
  };

  int action_count = 0;
  int start = 0;
  int end = 0;
  std::vector<std::vector<Edge>> out;  // indexed by node

  void validate() const {
    if (static_cast<int>(out.size()) != action_count)
      throw contract_error("task graph adjacency size mismatch");
    for (int i = 0; i < action_count; ++i) {
      if (i == end) {
        if (!out[i].empty()) throw contract_error("end node has outgoing edges");
        continue;
      }
      double sum = 0.0;
      for (const Edge& e : out[i]) {
        if (e.to < 0 || e.to >= action_count || e.to == i)
          throw contract_error("invalid edge target");
        sum += e.prob;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw contract_error("outgoing probabilities of node " +
                             std::to_string(i) + " sum to " +
                             std::to_string(sum));
    }
  }

  bool has_edge(int from, int to) const {
    for (const Edge& e : out[from])
      if (e.to == to) return true;
    return false;
  }
};

// ---------------------------------------------------------------------------
// World specification.
// ---------------------------------------------------------------------------

// Window sharpness regimes: a window either has a sharp newest frame, has
// exactly one sharp frame planted strictly before the newest, or is blurry
// throughout. Remaining probability mass goes to the all-blurry case.
struct BlurPlantSpec {
  double p_newest_sharp = 1.0;
  double p_plant_old = 0.0;
  int blur_passes = 2;          // 3×3 box-filter passes on blurry frames
  double sharp_noise = 0.016;   // texture noise amplitude of sharp frames

  void validate() const {
    if (p_newest_sharp < 0 || p_plant_old < 0 ||
        p_newest_sharp + p_plant_old > 1.0 + 1e-12)
      throw config_error("blur plant probabilities must form a distribution");
    if (blur_passes < 0) throw config_error("negative blur passes");
  }
};

struct WorldSpec {
  std::string name = "custom";
  int action_count = 16;
  int branching = 2;
  int min_len = 6;
  int max_len = 12;
  double alpha = 0.8;  // visual informativeness of RGB tokens
  double beta = 0.5;   // depth complementarity; > 0 aliases RGB prototypes
  BlurPlantSpec blur;
  int feature_dim = 32;
  int window = 5;
  int frame_size = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (action_count < 2) throw config_error("world needs at least 2 actions");
    if (branching < 1) throw config_error("branching must be >= 1");
    if (min_len < 2 || max_len < min_len)
      throw config_error("invalid episode length range");
    if (alpha < 0 || alpha > 1 || beta < 0 || beta > 1)
      throw config_error("alpha/beta must lie in [0,1]");
    if (feature_dim < 1 || window < 1 || frame_size < 3)
      throw config_error("invalid feature/window/frame dimensions");
    blur.validate();
  }
};

// ---------------------------------------------------------------------------
// Graph generation.
// ---------------------------------------------------------------------------

inline TaskGraph gen_task_graph(const WorldSpec& spec) {
  spec.validate();
  const int c = spec.action_count;
  RngStream rng = RngStream::substream(spec.seed, "graph");
  TaskGraph g;
  g.action_count = c;
  g.start = 0;
  g.end = c - 1;
  std::vector<std::vector<int>> targets(c);
  std::vector<int> outdeg(c, 0);

  // Spanning step: every node gets an incoming edge from an earlier node
  // with spare out-degree, which keeps everything reachable from start and
  // degenerates to a chain when branching = 1.
  for (int i = 1; i < c; ++i) {
    std::vector<int> candidates;
    for (int j = 0; j < i; ++j)
      if (j != g.end && outdeg[j] < spec.branching) candidates.push_back(j);
    const int j = candidates[rng.uniform_int(0, static_cast<long>(candidates.size()) - 1)];
    targets[j].push_back(i);
    ++outdeg[j];
  }
  // Termination guarantee: every non-end node keeps at least one forward edge.
  for (int i = 0; i < c - 1; ++i) {
    bool forward = false;
    for (int t : targets[i]) forward = forward || t > i;
    if (!forward) {
      const int t = static_cast<int>(rng.uniform_int(i + 1, c - 1));
      targets[i].push_back(t);
      ++outdeg[i];
    }
  }
  // Optional extra edges up to the branching budget.
  for (int i = 0; i < c - 1; ++i) {
    const int budget = spec.branching - outdeg[i];
    if (budget <= 0) continue;
    const int extra = static_cast<int>(rng.uniform_int(0, budget));
    for (int k = 0; k < extra; ++k) {
      int t = static_cast<int>(rng.uniform_int(0, c - 1));
      if (t == i || std::find(targets[i].begin(), targets[i].end(), t) !=
                        targets[i].end())
        continue;  // skip duplicates and self-loops rather than redraw
      targets[i].push_back(t);
      ++outdeg[i];
    }
  }

  g.out.resize(c);
  for (int i = 0; i < c - 1; ++i) {
    std::sort(targets[i].begin(), targets[i].end());
    std::vector<double> w(targets[i].size());
    double sum = 0.0;
    for (auto& x : w) {
      x = rng.uniform(0.5, 1.5);
      sum += x;
    }
    for (std::size_t k = 0; k < targets[i].size(); ++k)
      g.out[i].push_back({targets[i][k], w[k] / sum});
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Frames and features.
// ---------------------------------------------------------------------------

namespace detail {

inline void box_blur_pass(GrayFrame& f) {
  const int h = f.height, w = f.width;
  std::vector<double> out(f.px.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = std::clamp(r + dr, 0, h - 1);
          const int cc = std::clamp(c + dc, 0, w - 1);
          s += f.at(rr, cc);
        }
      out[static_cast<std::size_t>(r) * w + c] = s / 9.0;
    }
  }
  f.px = std::move(out);
}

inline void quantize_8bit(GrayFrame& f) {
  for (double& v : f.px)
    v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

}  // namespace detail

// Procedural texture: a smooth two-tone background plus per-pixel noise,
// blurred `blur_passes` times and quantized onto the 8-bit grid (so disk
// round-trips through PGM are lossless).
inline GrayFrame gen_frame(RngStream& rng, int size, double noise_amp,
                           int blur_passes) {
  GrayFrame f;
  f.width = f.height = size;
  f.px.resize(static_cast<std::size_t>(size) * size);
  const double fx = rng.uniform(0.2, 0.6);
  const double fy = rng.uniform(0.2, 0.6);
  const double phase = rng.uniform(0.0, 6.28318530717958648);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double base =
          0.5 + 0.2 * std::sin(fx * c + phase) * std::cos(fy * r - phase);
      f.at(r, c) = base + rng.gaussian(0.0, noise_amp);
    }
  for (int k = 0; k < blur_passes; ++k) detail::box_blur_pass(f);
  detail::quantize_8bit(f);
  return f;
}

struct StepRecord {
  std::vector<GrayFrame> frames;  // window, oldest first
  Tensor rgb_tokens;              // W×D, one row per frame
  Tensor depth_tokens;            // W×D
  int sharp_index = -1;           // plant position, -1 when all blurry
};

struct Episode {
  std::uint64_t seed = 0;
  std::vector<int> actions;
  std::vector<StepRecord> steps;  // aligned with actions

  int length() const { return static_cast<int>(actions.size()); }
};

namespace detail {

inline std::vector<double> unit_vector(std::uint64_t seed,
                                       std::string_view tag, int index,
                                       int dim) {
  RngStream rng = RngStream::substream(seed, tag, index);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (double& x : v) {
    x = rng.gaussian();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace detail

// RGB prototype group: with beta > 0 actions are aliased in pairs that
// share an RGB prototype and are separated only through depth.
inline int rgb_alias_group(const WorldSpec& spec, int action) {
  if (spec.beta <= 0.0) return action;
  if (action == spec.action_count - 1 && spec.action_count % 2 == 1)
    return action;  // odd action count leaves the last action unpaired
  return action / 2;
}

inline std::vector<double> rgb_prototype(const WorldSpec& spec, int action) {
  return detail::unit_vector(spec.seed, "rgb-proto",
                             rgb_alias_group(spec, action), spec.feature_dim);
}

inline std::vector<double> depth_prototype(const WorldSpec& spec, int action) {
  return detail::unit_vector(spec.seed, "depth-proto", action,
                             spec.feature_dim);
}

namespace detail {

// Token = signal·prototype + (1−signal)·noise. Blurry frames keep only a
// quarter of the signal coefficient.
inline void fill_token(std::vector<double>& row, const std::vector<double>& proto,
                       double signal, bool sharp, RngStream& rng) {
  const double s = sharp ? signal : 0.25 * signal;
  const double noise = 1.0 - s;
  const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(proto.size()));
  for (std::size_t j = 0; j < proto.size(); ++j)
    row[j] = s * proto[j] + noise * rng.gaussian(0.0, inv_sqrt_dim);
}

}  // namespace detail

// Deterministic in (graph, spec, seed); episodes are walks start→end whose
// length lies inside the configured range.
inline Episode sample_episode(const TaskGraph& graph, const WorldSpec& spec,
                              std::uint64_t episode_seed) {
  Episode ep;
  ep.seed = episode_seed;

  RngStream walk_rng = RngStream::substream(episode_seed, "walk");
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 100)
      throw data_error("no walk of length " + std::to_string(spec.min_len) +
                       ".." + std::to_string(spec.max_len) +
                       " reached the end node in 100 attempts");
    std::vector<int> actions{graph.start};
    int cur = graph.start;
    while (cur != graph.end &&
           static_cast<int>(actions.size()) < spec.max_len) {
      double u = walk_rng.uniform();
      int next = graph.out[cur].back().to;
      for (const TaskGraph::Edge& e : graph.out[cur]) {
        if (u < e.prob) {
          next = e.to;
          break;
        }
        u -= e.prob;
      }
      actions.push_back(next);
      cur = next;
    }
    if (cur == graph.end && static_cast<int>(actions.size()) >= spec.min_len) {
      ep.actions = std::move(actions);
      break;
    }
  }

  const int w = spec.window;
  const int d = spec.feature_dim;
  ep.steps.resize(ep.actions.size());
  for (int i = 0; i < ep.length(); ++i) {
    const int action = ep.actions[i];
    StepRecord& step = ep.steps[i];
    RngStream plant_rng = RngStream::substream(episode_seed, "plant", i);
    RngStream feat_rng = RngStream::substream(episode_seed, "feat", i);
    RngStream frame_rng = RngStream::substream(episode_seed, "frames", i);

    // window sharpness regime
    const double u = plant_rng.uniform();
    int sharp_index;
    if (u < spec.blur.p_newest_sharp) {
      sharp_index = w - 1;
    } else if (u < spec.blur.p_newest_sharp + spec.blur.p_plant_old) {
      sharp_index = w > 1 ? static_cast<int>(plant_rng.uniform_int(0, w - 2)) : 0;
    } else {
      sharp_index = -1;
    }
    step.sharp_index = sharp_index;

    step.frames.reserve(w);
    const auto rgb_proto = rgb_prototype(spec, action);
    const auto depth_proto = depth_prototype(spec, action);
    Tensor rgb(w, d), depth(w, d);
    std::vector<double> row(d);
    for (int f = 0; f < w; ++f) {
      const bool sharp =
          f == sharp_index || (spec.blur.blur_passes == 0);
      step.frames.push_back(gen_frame(frame_rng, spec.frame_size,
                                      spec.blur.sharp_noise,
                                      sharp ? 0 : spec.blur.blur_passes));
      detail::fill_token(row, rgb_proto, spec.alpha, sharp, feat_rng);
      for (int j = 0; j < d; ++j) rgb.mut_at(f, j) = row[j];
      detail::fill_token(row, depth_proto, spec.beta, sharp, feat_rng);
      for (int j = 0; j < d; ++j) depth.mut_at(f, j) = row[j];
    }
    step.rgb_tokens = rgb;
    step.depth_tokens = depth;
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Presets mirroring three qualitative dataset regimes.
// ---------------------------------------------------------------------------

inline std::vector<WorldSpec> world_presets(std::uint64_t seed = 1) {
  WorldSpec ikea;
  ikea.name = "ikea-like";
  ikea.action_count = 12;
  ikea.branching = 2;
  ikea.min_len = 6;
  ikea.max_len = 10;
  ikea.alpha = 0.85;
  ikea.beta = 0.6;
  ikea.blur = {1.0, 0.0, 0, 0.016};
  ikea.seed = seed;

  WorldSpec meccano;
  meccano.name = "meccano-like";
  meccano.action_count = 20;
  meccano.branching = 3;
  meccano.min_len = 8;
  meccano.max_len = 14;
  meccano.alpha = 0.6;
  meccano.beta = 0.6;
  meccano.blur = {0.015, 0.013, 2, 0.016};
  meccano.seed = seed;

  WorldSpec assembly;
  assembly.name = "assembly-like";
  assembly.action_count = 30;
  assembly.branching = 4;
  assembly.min_len = 10;
  assembly.max_len = 18;
  assembly.alpha = 0.15;
  assembly.beta = 0.4;
  assembly.blur = {0.677, 0.206, 2, 0.016};
  assembly.seed = seed;

  return {ikea, meccano, assembly};
}

inline WorldSpec world_preset(const std::string& name, std::uint64_t seed = 1) {
  for (WorldSpec& s : world_presets(seed))
    if (s.name == name) return s;
  throw config_error("unknown world preset '" + name + "'");
}

// Human-readable procedural action names, unique for up to 100 actions.
inline ActionVocabulary make_vocabulary(int action_count) {
  static const char* verbs[] = {"pick",   "place",  "align", "attach", "rotate",
                                "insert", "tighten", "flip",  "slide",  "press"};
  static const char* objects[] = {"panel", "leg",    "bolt",  "frame", "bracket",
                                  "shelf", "wheel", "rail",  "pin",   "plate"};
  if (action_count > 100)
    throw config_error("vocabulary generator supports at most 100 actions");
  std::vector<std::string> names;
  names.reserve(action_count);
  for (int i = 0; i < action_count; ++i)
    names.push_back(std::string(verbs[i % 10]) + "_" + objects[i / 10]);
  return ActionVocabulary(std::move(names));
}

struct Dataset {
  WorldSpec spec;
  ActionVocabulary vocab;
  std::vector<Episode> train, val, test;
};

inline std::vector<Episode> generate_episodes(const TaskGraph& graph,
                                              const WorldSpec& spec,
                                              std::string_view split,
                                              int count) {
  std::vector<Episode> eps;
  eps.reserve(count);
  for (int i = 0; i < count; ++i) {
    RngStream s = RngStream::substream(spec.seed, split, i);
    eps.push_back(sample_episode(graph, spec, s.next_u64()));
  }
  return eps;
}

inline Dataset generate_dataset(const WorldSpec& spec, int n_train, int n_val,
                                int n_test) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.vocab = make_vocabulary(spec.action_count);
  const TaskGraph graph = gen_task_graph(spec);
  ds.train = generate_episodes(graph, spec, "episodes/train", n_train);
  ds.val = generate_episodes(graph, spec, "episodes/val", n_val);
  ds.test = generate_episodes(graph, spec, "episodes/test", n_test);
  return ds;
}

// ---------------------------------------------------------------------------
// Disk format: text manifest + versioned binary episode files + PGM frames.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_i32(std::ofstream& out, std::int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64s(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw data_error("truncated binary file '" + path + "'");
  return v;
}

inline std::int32_t read_i32(std::ifstream& in, const std::string& path) {
  std::int32_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw data_error("truncated binary file '" + path + "'");
  return v;
}

inline std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
  std::uint64_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw data_error("truncated binary file '" + path + "'");
  return v;
}

inline std::vector<double> read_f64s(std::ifstream& in, std::size_t n,
                                     const std::string& path) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw data_error("truncated binary file '" + path + "'");
  return v;
}

}  // namespace detail

constexpr std::uint32_t kEpisodeFormatVersion = 1;

inline void save_episode(const Episode& ep, int window, int feature_dim,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write episode '" + path + "'");
  out.write("GLEP", 4);
  detail::write_u32(out, kEpisodeFormatVersion);
  detail::write_u64(out, ep.seed);
  detail::write_u32(out, static_cast<std::uint32_t>(ep.length()));
  detail::write_u32(out, static_cast<std::uint32_t>(window));
  detail::write_u32(out, static_cast<std::uint32_t>(feature_dim));
  for (int a : ep.actions) detail::write_i32(out, a);
  for (const StepRecord& s : ep.steps) {
    detail::write_f64s(out, s.rgb_tokens.values());
    detail::write_f64s(out, s.depth_tokens.values());
    detail::write_i32(out, s.sharp_index);
  }
  if (!out) throw data_error("short write on episode '" + path + "'");
}

// Loads tokens and metadata; frames are loaded separately from their PGMs.
inline Episode load_episode(const std::string& path, int expect_window,
                            int expect_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open episode '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "GLEP")
    throw data_error("'" + path + "' is not an episode file");
  const auto version = detail::read_u32(in, path);
  if (version != kEpisodeFormatVersion)
    throw data_error("episode file version " + std::to_string(version) +
                     " unsupported");
  Episode ep;
  ep.seed = detail::read_u64(in, path);
  const int len = static_cast<int>(detail::read_u32(in, path));
  const int w = static_cast<int>(detail::read_u32(in, path));
  const int d = static_cast<int>(detail::read_u32(in, path));
  if (w != expect_window || d != expect_dim)
    throw data_error("episode '" + path + "' has window/dim " +
                     std::to_string(w) + "/" + std::to_string(d) +
                     ", manifest says " + std::to_string(expect_window) + "/" +
                     std::to_string(expect_dim));
  ep.actions.resize(len);
  for (int i = 0; i < len; ++i) ep.actions[i] = detail::read_i32(in, path);
  ep.steps.resize(len);
  for (int i = 0; i < len; ++i) {
    StepRecord& s = ep.steps[i];
    s.rgb_tokens = Tensor::from(
        w, d, detail::read_f64s(in, static_cast<std::size_t>(w) * d, path));
    s.depth_tokens = Tensor::from(
        w, d, detail::read_f64s(in, static_cast<std::size_t>(w) * d, path));
    s.sharp_index = detail::read_i32(in, path);
  }
  return ep;
}

namespace detail {

inline std::string episode_stem(const std::string& split, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return "ep_" + split + buf;
}

}  // namespace detail

inline void export_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "episodes", ec);
  fs::create_directories(fs::path(dir) / "frames", ec);
  if (ec) throw data_error("cannot create dataset directory '" + dir + "'");

  std::ostringstream man;
  const WorldSpec& s = ds.spec;
  man << "glimpse-dataset v1\n";
  man << "name " << s.name << "\n";
  man << "seed " << s.seed << "\n";
  man << "actions " << s.action_count << "\n";
  man << "branching " << s.branching << "\n";
  man << "len " << s.min_len << " " << s.max_len << "\n";
  man << "alpha " << s.alpha << "\n";
  man << "beta " << s.beta << "\n";
  man << "blur " << s.blur.p_newest_sharp << " " << s.blur.p_plant_old << " "
      << s.blur.blur_passes << " " << s.blur.sharp_noise << "\n";
  man << "feature_dim " << s.feature_dim << "\n";
  man << "window " << s.window << "\n";
  man << "frame_size " << s.frame_size << "\n";
  for (int i = 0; i < ds.vocab.size(); ++i)
    man << "action " << i << " " << ds.vocab.name(i) << "\n";

  auto dump_split = [&](const std::vector<Episode>& eps,
                        const std::string& split) {
    for (int i = 0; i < static_cast<int>(eps.size()); ++i) {
      const std::string stem = detail::episode_stem(split, i);
      const std::string rel = "episodes/" + stem + ".bin";
      save_episode(eps[i], s.window, s.feature_dim,
                   (fs::path(dir) / rel).string());
      const fs::path fdir = fs::path(dir) / "frames" / stem;
      fs::create_directories(fdir);
      for (int step = 0; step < eps[i].length(); ++step)
        for (int f = 0; f < s.window; ++f) {
          char name[32];
          std::snprintf(name, sizeof name, "s%03d_f%d.pgm", step, f);
          save_pgm(eps[i].steps[step].frames[f], (fdir / name).string());
        }
      man << "episode " << split << " " << i << " " << rel << " "
          << eps[i].length() << "\n";
    }
  };
  dump_split(ds.train, "train");
  dump_split(ds.val, "val");
  dump_split(ds.test, "test");

  // atomic manifest write: temp + rename
  const fs::path final_path = fs::path(dir) / "manifest.txt";
  const fs::path tmp_path = fs::path(dir) / "manifest.txt.tmp";
  {
    std::ofstream out(tmp_path);
    if (!out) throw data_error("cannot write manifest in '" + dir + "'");
    out << man.str();
  }
  fs::rename(tmp_path, final_path, ec);
  if (ec) throw data_error("cannot finalize manifest in '" + dir + "'");
}

inline Dataset import_dataset(const std::string& dir, bool load_frames = true) {
  namespace fs = std::filesystem;
  const std::string man_path = (fs::path(dir) / "manifest.txt").string();
  std::ifstream in(man_path);
  if (!in) throw data_error("cannot open manifest '" + man_path + "'");

  Dataset ds;
  std::vector<std::string> action_names;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw data_error(man_path + ":" + std::to_string(line_no) + ": " + what);
  };

  if (!std::getline(in, line) || line != "glimpse-dataset v1") {
    line_no = 1;
    fail("missing or unsupported dataset header");
  }
  line_no = 1;
  WorldSpec& s = ds.spec;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto want = [&](auto&... vals) {
      ((ss >> vals), ...);
      if (ss.fail()) fail("malformed '" + key + "' entry");
    };
    if (key == "name") {
      want(s.name);
    } else if (key == "seed") {
      want(s.seed);
    } else if (key == "actions") {
      want(s.action_count);
    } else if (key == "branching") {
      want(s.branching);
    } else if (key == "len") {
      want(s.min_len, s.max_len);
    } else if (key == "alpha") {
      want(s.alpha);
    } else if (key == "beta") {
      want(s.beta);
    } else if (key == "blur") {
      want(s.blur.p_newest_sharp, s.blur.p_plant_old, s.blur.blur_passes,
           s.blur.sharp_noise);
    } else if (key == "feature_dim") {
      want(s.feature_dim);
    } else if (key == "window") {
      want(s.window);
    } else if (key == "frame_size") {
      want(s.frame_size);
    } else if (key == "action") {
      int id;
      std::string name;
      want(id, name);
      if (id != static_cast<int>(action_names.size()))
        fail("action ids must be dense and ordered");
      action_names.push_back(name);
    } else if (key == "episode") {
      std::string split, rel;
      int index, length;
      want(split, index, rel, length);
      Episode ep = load_episode((fs::path(dir) / rel).string(), s.window,
                                s.feature_dim);
      if (ep.length() != length) fail("episode length disagrees with file");
      if (load_frames) {
        const fs::path fdir =
            fs::path(dir) / "frames" / fs::path(rel).stem().string();
        for (int step = 0; step < ep.length(); ++step) {
          ep.steps[step].frames.resize(s.window);
          for (int f = 0; f < s.window; ++f) {
            char name[32];
            std::snprintf(name, sizeof name, "s%03d_f%d.pgm", step, f);
            ep.steps[step].frames[f] = load_pgm((fdir / name).string());
          }
        }
      }
      if (split == "train")
        ds.train.push_back(std::move(ep));
      else if (split == "val")
        ds.val.push_back(std::move(ep));
      else if (split == "test")
        ds.test.push_back(std::move(ep));
      else
        fail("unknown split '" + split + "'");
    } else {
      fail("unknown manifest key '" + key + "'");
    }
  }
  if (action_names.empty()) fail("manifest lists no actions");
  ds.vocab = ActionVocabulary(std::move(action_names));
  return ds;
}

}  // namespace glimpse
