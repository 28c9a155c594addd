#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "glimpse/errors.hpp"
#include "glimpse/model.hpp"
#include "glimpse/train.hpp"
#include "glimpse/world.hpp"

namespace glimpse {

// Flat key=value configuration with [section] headers and '#' comments.
// Keys are stored as "section.key"; unknown keys are rejected when the
// typed RunConfig is built.
class KeyValueConfig {
 public:
  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str(), path);
  }

  static KeyValueConfig from_text(const std::string& text,
                                  const std::string& origin = "<config>") {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto trim = [](std::string s) {
        std::size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw config_error(origin + ":" + std::to_string(line_no) +
                             ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw config_error(origin + ":" + std::to_string(line_no) +
                           ": expected key=value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty())
        throw config_error(origin + ":" + std::to_string(line_no) +
                           ": empty key");
      cfg.values_[section.empty() ? key : section + "." + key] = val;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key, double dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw config_error("key '" + key + "': '" + it->second +
                         "' is not a number");
    }
  }

  long get_int(const std::string& key, long dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw config_error("key '" + key + "': '" + it->second +
                         "' is not an integer");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw config_error("key '" + key + "': '" + it->second +
                         "' is not an unsigned integer");
    }
  }

  bool get_bool(const std::string& key, bool dflt) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "1" || it->second == "true" || it->second == "on")
      return true;
    if (it->second == "0" || it->second == "false" || it->second == "off")
      return false;
    throw config_error("key '" + key + "': '" + it->second +
                       "' is not a boolean");
  }

  // Every present key must have been consumed by a get_* call.
  void reject_unknown() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key))
        throw config_error("unknown config key '" + key + "'");
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// Everything one experiment needs: world, model, training and corruption
// settings plus the root seed.
struct RunConfig {
  WorldSpec world;
  int episodes_train = 60;
  int episodes_val = 20;
  int episodes_test = 20;
  ModelConfig model;
  TrainSpec train;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware default, still capped by GLIMPSE_THREADS

  static RunConfig from_config(KeyValueConfig& kv) {
    RunConfig rc;

    const std::string preset = kv.get_string("world.preset", "");
    if (!preset.empty()) rc.world = world_preset(preset);
    WorldSpec& w = rc.world;
    w.action_count = static_cast<int>(kv.get_int("world.actions", w.action_count));
    w.branching = static_cast<int>(kv.get_int("world.branching", w.branching));
    w.min_len = static_cast<int>(kv.get_int("world.min_len", w.min_len));
    w.max_len = static_cast<int>(kv.get_int("world.max_len", w.max_len));
    w.alpha = kv.get_double("world.alpha", w.alpha);
    w.beta = kv.get_double("world.beta", w.beta);
    w.feature_dim = static_cast<int>(kv.get_int("world.feature_dim", w.feature_dim));
    w.window = static_cast<int>(kv.get_int("world.window", w.window));
    w.frame_size = static_cast<int>(kv.get_int("world.frame_size", w.frame_size));
    w.blur.p_newest_sharp =
        kv.get_double("world.blur_newest_sharp", w.blur.p_newest_sharp);
    w.blur.p_plant_old = kv.get_double("world.blur_plant_old", w.blur.p_plant_old);
    w.blur.blur_passes =
        static_cast<int>(kv.get_int("world.blur_passes", w.blur.blur_passes));
    w.blur.sharp_noise = kv.get_double("world.blur_sharp_noise", w.blur.sharp_noise);
    rc.episodes_train =
        static_cast<int>(kv.get_int("world.episodes_train", rc.episodes_train));
    rc.episodes_val =
        static_cast<int>(kv.get_int("world.episodes_val", rc.episodes_val));
    rc.episodes_test =
        static_cast<int>(kv.get_int("world.episodes_test", rc.episodes_test));

    ModelConfig& m = rc.model;
    m.embed_dim = static_cast<int>(kv.get_int("model.embed_dim", m.embed_dim));
    m.layers = static_cast<int>(kv.get_int("model.layers", m.layers));
    m.heads = static_cast<int>(kv.get_int("model.heads", m.heads));
    m.history_len = static_cast<int>(kv.get_int("model.history_len", m.history_len));
    m.txt_dim = static_cast<int>(kv.get_int("model.txt_dim", m.txt_dim));
    m.modalities =
        Modalities::parse(kv.get_string("model.modalities", m.modalities.str()));
    m.fusion =
        fusion_variant_from_string(kv.get_string("model.fusion", to_string(m.fusion)));
    m.keyframe = keyframe_policy_from_string(
        kv.get_string("model.keyframe", to_string(m.keyframe)));
    m.keyframe_threshold =
        kv.get_double("model.keyframe_threshold", m.keyframe_threshold);
    m.task = task_from_string(kv.get_string("model.task", to_string(m.task)));
    m.visual_encoder_stack =
        kv.get_bool("model.visual_encoder_stack", m.visual_encoder_stack);
    m.scalar_gate = kv.get_bool("model.scalar_gate", m.scalar_gate);
    m.free_gate = kv.get_bool("model.free_gate", m.free_gate);
    m.history_bias = kv.get_bool("model.history_bias", m.history_bias);
    // class count follows the world unless pinned explicitly
    m.class_count = static_cast<int>(
        kv.get_int("model.class_count", rc.world.action_count));

    m.corruption.kind =
        corruption_kind_from_string(kv.get_string("corruption.kind", "none"));
    m.corruption.p = kv.get_double("corruption.p", m.corruption.p);
    m.corruption.sigma = kv.get_double("corruption.sigma", m.corruption.sigma);

    TrainSpec& t = rc.train;
    t.epochs = static_cast<int>(kv.get_int("train.epochs", t.epochs));
    t.patience = static_cast<int>(kv.get_int("train.patience", t.patience));
    t.improvement_threshold =
        kv.get_double("train.improvement_threshold", t.improvement_threshold);
    t.batch_size = static_cast<int>(kv.get_int("train.batch_size", t.batch_size));
    t.lr = kv.get_double("train.lr", t.lr);
    t.weight_decay = kv.get_double("train.weight_decay", t.weight_decay);
    const std::string monitor = kv.get_string("train.monitor", "top1");
    if (monitor == "top1")
      t.monitor = TrainSpec::Monitor::top1;
    else if (monitor == "recall5")
      t.monitor = TrainSpec::Monitor::recall5;
    else
      throw config_error("unknown train.monitor '" + monitor + "'");

    rc.seed = kv.get_u64("seed", rc.seed);
    rc.threads = static_cast<int>(kv.get_int("threads", rc.threads));

    kv.reject_unknown();

    rc.world.seed = RngStream::substream(rc.seed, "world").next_u64();
    t.seed = RngStream::substream(rc.seed, "train").next_u64();
    rc.world.validate();
    rc.model.validate();
    rc.train.validate();
    return rc;
  }
};

}  // namespace glimpse
