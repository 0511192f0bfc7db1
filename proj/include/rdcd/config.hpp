#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rdcd/error.hpp"
#include "rdcd/evaluator.hpp"
#include "rdcd/synthdata.hpp"
#include "rdcd/trainer.hpp"

namespace rdcd {

struct EvalConfig {
  std::size_t top_k = 10;
  std::size_t sn_k = 10;
  double sn_beta = 1.0;
  double spectrum_tol_rel = 1e-6;
};

// Flat key=value run configuration covering corpus generation, training and
// evaluation. Parsing rejects unknown and duplicate keys; serialize() is the
// canonical form, and parse(serialize(x)) reproduces x exactly.
struct RunConfig {
  int format_version = 1;
  std::uint64_t seed = 7;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;

  void set_seed(std::uint64_t s) {
    seed = s;
    train.seed = s;
  }

  static RunConfig parse_string(const std::string& text);
  static RunConfig parse_file(const std::string& path);
  std::string serialize() const;
  std::uint64_t hash() const;
};

namespace cfgdetail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), Errc::config_error,
          "config: bad real value '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), Errc::config_error,
          "config: bad unsigned value '" + s + "'");
  return v;
}

inline long long parse_i64(const std::string& s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), Errc::config_error,
          "config: bad integer value '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  fail(Errc::config_error, "config: bad boolean value '" + s + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<Field>& fields() {
  auto size_field = [](std::string key, auto access) {
    return Field{key,
                 [access](const RunConfig& c) {
                   return std::to_string(access(const_cast<RunConfig&>(c)));
                 },
                 [access](RunConfig& c, const std::string& v) {
                   access(c) = static_cast<std::size_t>(parse_u64(v));
                 }};
  };
  auto int_field = [](std::string key, auto access) {
    return Field{key,
                 [access](const RunConfig& c) {
                   return std::to_string(access(const_cast<RunConfig&>(c)));
                 },
                 [access](RunConfig& c, const std::string& v) {
                   access(c) = static_cast<int>(parse_i64(v));
                 }};
  };
  auto dbl_field = [](std::string key, auto access) {
    return Field{key,
                 [access](const RunConfig& c) {
                   return format_double(access(const_cast<RunConfig&>(c)));
                 },
                 [access](RunConfig& c, const std::string& v) { access(c) = parse_double(v); }};
  };
  auto bool_field = [](std::string key, auto access) {
    return Field{key,
                 [access](const RunConfig& c) {
                   return access(const_cast<RunConfig&>(c)) ? "true" : "false";
                 },
                 [access](RunConfig& c, const std::string& v) { access(c) = parse_bool(v); }};
  };

  static const std::vector<Field> table = {
      Field{"format_version",
            [](const RunConfig& c) { return std::to_string(c.format_version); },
            [](RunConfig& c, const std::string& v) { c.format_version = static_cast<int>(parse_i64(v)); }},
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.set_seed(parse_u64(v)); }},

      size_field("data.d_in", [](RunConfig& c) -> std::size_t& { return c.data.d_in; }),
      size_field("data.n_train", [](RunConfig& c) -> std::size_t& { return c.data.n_train; }),
      size_field("data.n_refs", [](RunConfig& c) -> std::size_t& { return c.data.n_refs; }),
      size_field("data.n_queries", [](RunConfig& c) -> std::size_t& { return c.data.n_queries; }),
      size_field("data.n_distractors",
                 [](RunConfig& c) -> std::size_t& { return c.data.n_distractors; }),
      size_field("data.n_background",
                 [](RunConfig& c) -> std::size_t& { return c.data.n_background; }),
      dbl_field("data.hard_negative_fraction",
                [](RunConfig& c) -> double& { return c.data.hard_negative_fraction; }),
      dbl_field("data.hn_gap", [](RunConfig& c) -> double& { return c.data.hn_gap; }),
      dbl_field("data.noise_sigma",
                [](RunConfig& c) -> double& { return c.data.augment.noise_sigma; }),
      dbl_field("data.scale_lo", [](RunConfig& c) -> double& { return c.data.augment.scale_lo; }),
      dbl_field("data.scale_hi", [](RunConfig& c) -> double& { return c.data.augment.scale_hi; }),
      dbl_field("data.mask_prob", [](RunConfig& c) -> double& { return c.data.augment.mask_prob; }),
      dbl_field("data.rotation_strength",
                [](RunConfig& c) -> double& { return c.data.augment.rotation_strength; }),

      int_field("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; }),
      int_field("train.teacher_epochs",
                [](RunConfig& c) -> int& { return c.train.teacher_epochs; }),
      int_field("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }),
      int_field("train.warmup_epochs",
                [](RunConfig& c) -> int& { return c.train.warmup_epochs; }),
      dbl_field("train.lr", [](RunConfig& c) -> double& { return c.train.lr; }),
      dbl_field("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }),
      dbl_field("train.momentum", [](RunConfig& c) -> double& { return c.train.momentum; }),
      dbl_field("train.tau_teacher",
                [](RunConfig& c) -> double& { return c.train.temps.tau_teacher; }),
      dbl_field("train.tau_student",
                [](RunConfig& c) -> double& { return c.train.temps.tau_student; }),
      dbl_field("train.tau_contrastive",
                [](RunConfig& c) -> double& { return c.train.temps.tau_contrastive; }),
      dbl_field("train.lambda_rel",
                [](RunConfig& c) -> double& { return c.train.weights.lambda_rel; }),
      dbl_field("train.lambda_con",
                [](RunConfig& c) -> double& { return c.train.weights.lambda_con; }),
      dbl_field("train.lambda_hn",
                [](RunConfig& c) -> double& { return c.train.weights.lambda_hn; }),
      dbl_field("train.koleo_weight", [](RunConfig& c) -> double& { return c.train.koleo_weight; }),
      size_field("train.queue_teacher",
                 [](RunConfig& c) -> std::size_t& { return c.train.queue_teacher; }),
      size_field("train.queue_student",
                 [](RunConfig& c) -> std::size_t& { return c.train.queue_student; }),
      size_field("train.teacher_dim",
                 [](RunConfig& c) -> std::size_t& { return c.train.teacher_dim; }),
      size_field("train.trunk_hidden",
                 [](RunConfig& c) -> std::size_t& { return c.train.trunk_hidden; }),
      size_field("train.trunk_out", [](RunConfig& c) -> std::size_t& { return c.train.trunk_out; }),
      size_field("train.proj_hidden",
                 [](RunConfig& c) -> std::size_t& { return c.train.proj_hidden; }),
      size_field("train.student_dim",
                 [](RunConfig& c) -> std::size_t& { return c.train.student_dim; }),
      Field{"train.distill_mode",
            [](const RunConfig& c) {
              return std::string(c.train.distill_mode == DistillMode::rsd ? "rsd" : "fkd");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "rsd")
                c.train.distill_mode = DistillMode::rsd;
              else if (v == "fkd")
                c.train.distill_mode = DistillMode::fkd;
              else
                fail(Errc::config_error, "config: train.distill_mode must be rsd or fkd");
            }},
      Field{"train.hn_mode",
            [](const RunConfig& c) {
              return std::string(c.train.hn_mode == HnMode::hardest ? "hardest" : "literal");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "hardest")
                c.train.hn_mode = HnMode::hardest;
              else if (v == "literal")
                c.train.hn_mode = HnMode::literal;
              else
                fail(Errc::config_error, "config: train.hn_mode must be hardest or literal");
            }},
      bool_field("train.exclude_positive",
                 [](RunConfig& c) -> bool& { return c.train.exclude_positive; }),

      size_field("eval.top_k", [](RunConfig& c) -> std::size_t& { return c.eval.top_k; }),
      size_field("eval.sn_k", [](RunConfig& c) -> std::size_t& { return c.eval.sn_k; }),
      dbl_field("eval.sn_beta", [](RunConfig& c) -> double& { return c.eval.sn_beta; }),
      dbl_field("eval.spectrum_tol_rel",
                [](RunConfig& c) -> double& { return c.eval.spectrum_tol_rel; }),
  };
  return table;
}

}  // namespace cfgdetail

inline RunConfig RunConfig::parse_string(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    std::string trimmed = cfgdetail::trim(line);
    if (trimmed.empty()) continue;
    std::size_t eq = trimmed.find('=');
    require(eq != std::string::npos, Errc::config_error,
            "config: line " + std::to_string(lineno) + " is not key = value");
    std::string key = cfgdetail::trim(trimmed.substr(0, eq));
    std::string value = cfgdetail::trim(trimmed.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    require(!seen.count(key), Errc::config_error, "config: duplicate key '" + key + "'");
    seen.insert(key);

    bool matched = false;
    for (const auto& f : cfgdetail::fields()) {
      if (f.key == key) {
        f.set(cfg, value);
        matched = true;
        break;
      }
    }
    require(matched, Errc::config_error, "config: unknown key '" + key + "'");
  }
  cfg.train.seed = cfg.seed;
  return cfg;
}

inline RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::missing_artifact, "config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

inline std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& f : cfgdetail::fields()) {
    out += f.key;
    out += " = ";
    out += f.get(*this);
    out += "\n";
  }
  return out;
}

inline std::uint64_t RunConfig::hash() const {
  std::string s = serialize();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace rdcd
