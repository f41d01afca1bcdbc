// SPDX-License-Identifier: Apache-2.0
#include "core/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>
#include <vector>

namespace carf::run {

RunConfig RunConfig::desk_default() {
  RunConfig cfg;
  cfg.net = net::NetworkConfig::for_input(512);
  return cfg;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return d;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument(v);
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(v);
}

}  // namespace

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
  RunConfig cfg = desk_default();
  bool level_sizes_set = false, emb_sizes_set = false;

  using Setter = std::function<void(const std::string&)>;
  const std::unordered_map<std::string, Setter> setters = {
      {"n_input", [&](const std::string& v) { cfg.net.n_input = parse_u64(v); }},
      {"level_sizes",
       [&](const std::string& v) {
         const auto parts = split_csv(v);
         if (parts.size() != 4) throw std::invalid_argument(v);
         for (int i = 0; i < 4; ++i) cfg.net.level_sizes[i] = parse_u64(parts[i]);
         level_sizes_set = true;
       }},
      {"embedding_conv_sizes",
       [&](const std::string& v) {
         const auto parts = split_csv(v);
         if (parts.size() != 2) throw std::invalid_argument(v);
         for (int i = 0; i < 2; ++i) cfg.net.embedding_conv_sizes[i] = parse_u64(parts[i]);
         emb_sizes_set = true;
       }},
      {"channels",
       [&](const std::string& v) {
         const auto parts = split_csv(v);
         if (parts.size() != 4) throw std::invalid_argument(v);
         for (int i = 0; i < 4; ++i) cfg.net.channels[i] = parse_u64(parts[i]);
       }},
      {"cv_channels", [&](const std::string& v) { cfg.net.cv_channels = parse_u64(v); }},
      {"up_channels", [&](const std::string& v) { cfg.net.up_channels = parse_u64(v); }},
      {"predictor_channels",
       [&](const std::string& v) { cfg.net.predictor_channels = parse_u64(v); }},
      {"fc_d_channels", [&](const std::string& v) { cfg.net.fc_d_channels = parse_u64(v); }},
      {"k_pyramid", [&](const std::string& v) { cfg.net.k_pyramid = parse_u64(v); }},
      {"k_cv1", [&](const std::string& v) { cfg.net.k_cv1 = parse_u64(v); }},
      {"k_cv2", [&](const std::string& v) { cfg.net.k_cv2 = parse_u64(v); }},
      {"k_up", [&](const std::string& v) { cfg.net.k_up = parse_u64(v); }},
      {"loss_weights",
       [&](const std::string& v) {
         const auto parts = split_csv(v);
         if (parts.size() != 4) throw std::invalid_argument(v);
         for (int i = 0; i < 4; ++i) cfg.net.loss_weights[i] = parse_double(parts[i]);
       }},
      {"context_aware", [&](const std::string& v) { cfg.net.context_aware = parse_bool(v); }},
      {"residual_learning",
       [&](const std::string& v) { cfg.net.residual_learning = parse_bool(v); }},
      {"lr", [&](const std::string& v) { cfg.lr = parse_double(v); }},
      {"beta1", [&](const std::string& v) { cfg.beta1 = parse_double(v); }},
      {"beta2", [&](const std::string& v) { cfg.beta2 = parse_double(v); }},
      {"epsilon", [&](const std::string& v) { cfg.epsilon = parse_double(v); }},
      {"decay_rate", [&](const std::string& v) { cfg.decay_rate = parse_double(v); }},
      {"decay_step", [&](const std::string& v) { cfg.decay_step = parse_u64(v); }},
      {"batch_size", [&](const std::string& v) { cfg.batch_size = parse_u64(v); }},
      {"max_steps", [&](const std::string& v) { cfg.max_steps = parse_u64(v); }},
      {"seed", [&](const std::string& v) { cfg.seed = parse_u64(v); }},
      {"checkpoint_every", [&](const std::string& v) { cfg.checkpoint_every = parse_u64(v); }},
      {"threads", [&](const std::string& v) { cfg.threads = parse_u64(v); }},
  };

  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
      it->second(value);
    } catch (const std::exception&) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
  }

  if (!level_sizes_set) {
    cfg.net.level_sizes = net::NetworkConfig::for_input(cfg.net.n_input).level_sizes;
  }
  if (!emb_sizes_set) {
    cfg.net.embedding_conv_sizes =
        net::NetworkConfig::for_input(cfg.net.n_input).embedding_conv_sizes;
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_text(text, path);
}

void RunConfig::validate() const {
  net.validate();
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in (0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("decay_rate must be in (0,1]");
  if (decay_step == 0) throw ConfigError("decay_step must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
}

std::string RunConfig::to_text() const {
  char buf[2048];
  std::snprintf(
      buf, sizeof(buf),
      "n_input = %zu\n"
      "level_sizes = %zu,%zu,%zu,%zu\n"
      "embedding_conv_sizes = %zu,%zu\n"
      "channels = %zu,%zu,%zu,%zu\n"
      "cv_channels = %zu\nup_channels = %zu\npredictor_channels = %zu\nfc_d_channels = %zu\n"
      "k_pyramid = %zu\nk_cv1 = %zu\nk_cv2 = %zu\nk_up = %zu\n"
      "loss_weights = %.17g,%.17g,%.17g,%.17g\n"
      "context_aware = %s\nresidual_learning = %s\n"
      "lr = %.17g\nbeta1 = %.17g\nbeta2 = %.17g\nepsilon = %.17g\n"
      "decay_rate = %.17g\ndecay_step = %llu\n"
      "batch_size = %zu\nmax_steps = %llu\nseed = %llu\ncheckpoint_every = %llu\nthreads = %zu\n",
      net.n_input, net.level_sizes[0], net.level_sizes[1], net.level_sizes[2], net.level_sizes[3],
      net.embedding_conv_sizes[0], net.embedding_conv_sizes[1], net.channels[0], net.channels[1],
      net.channels[2], net.channels[3], net.cv_channels, net.up_channels, net.predictor_channels,
      net.fc_d_channels, net.k_pyramid, net.k_cv1, net.k_cv2, net.k_up, net.loss_weights[0],
      net.loss_weights[1], net.loss_weights[2], net.loss_weights[3],
      net.context_aware ? "true" : "false", net.residual_learning ? "true" : "false", lr, beta1,
      beta2, epsilon, decay_rate, static_cast<unsigned long long>(decay_step), batch_size,
      static_cast<unsigned long long>(max_steps), static_cast<unsigned long long>(seed),
      static_cast<unsigned long long>(checkpoint_every), threads);
  return buf;
}

}  // namespace carf::run
