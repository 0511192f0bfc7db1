#pragma once

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdcd/config.hpp"
#include "rdcd/encoder.hpp"
#include "rdcd/error.hpp"
#include "rdcd/evaluator.hpp"
#include "rdcd/synthdata.hpp"
#include "rdcd/trainer.hpp"

namespace rdcd {

static_assert(std::endian::native == std::endian::little,
              "flat .f64 files are little-endian; big-endian hosts are unsupported");

namespace iodetail {

using json = nlohmann::json;

// Shortest round-trip decimal formatting (CSV fields).
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Hex-float encoding preserves the exact bit pattern across save/load.
inline std::string hex_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return std::string(buf);
}

inline double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  require(end == s.c_str() + s.size(), Errc::io_error, "checkpoint: bad hex float '" + s + "'");
  return v;
}

inline json layer_to_json(const Layer& l) {
  json j;
  j["in"] = l.in_dim();
  j["out"] = l.out_dim();
  j["act"] = l.act == Activation::relu ? "relu" : "identity";
  json w = json::array();
  for (double x : l.W.data) w.push_back(hex_double(x));
  json b = json::array();
  for (double x : l.b) b.push_back(hex_double(x));
  j["W"] = std::move(w);
  j["b"] = std::move(b);
  return j;
}

inline Layer layer_from_json(const json& j) {
  Layer l;
  std::size_t in = j.at("in").get<std::size_t>();
  std::size_t out = j.at("out").get<std::size_t>();
  std::string act = j.at("act").get<std::string>();
  require(act == "relu" || act == "identity", Errc::io_error, "checkpoint: unknown activation");
  l.act = act == "relu" ? Activation::relu : Activation::identity;
  l.W = Mat(out, in);
  const json& w = j.at("W");
  require(w.size() == out * in, Errc::io_error, "checkpoint: weight count mismatch");
  for (std::size_t i = 0; i < w.size(); ++i)
    l.W.data[i] = parse_hex_double(w[i].get<std::string>());
  const json& b = j.at("b");
  require(b.size() == out, Errc::io_error, "checkpoint: bias count mismatch");
  l.b.resize(out);
  for (std::size_t i = 0; i < b.size(); ++i) l.b[i] = parse_hex_double(b[i].get<std::string>());
  return l;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io_error, "cannot write " + path.string());
  out << text;
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::missing_artifact, "missing file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_f64(const std::filesystem::path& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io_error, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  require(out.good(), Errc::io_error, "write failed for " + path.string());
}

inline Mat read_f64(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::missing_artifact, "missing file " + path.string());
  Mat m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  require(in.gcount() == static_cast<std::streamsize>(m.data.size() * sizeof(double)),
          Errc::io_error, "short read in " + path.string());
  return m;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace iodetail

// Creates the output directory; refuses to overwrite a directory already
// holding `marker` unless force is set.
inline void prepare_out_dir(const std::filesystem::path& dir, const std::string& marker,
                            bool force) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::io_error, "cannot create output directory " + dir.string());
  if (!force && fs::exists(dir / marker))
    fail(Errc::io_error,
         dir.string() + " already holds " + marker + "; pass --force to overwrite");
}

inline void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params) {
  iodetail::json j;
  j["format_version"] = 1;
  j["kind"] = "encoder";
  iodetail::json trunk = iodetail::json::array();
  for (const Layer& l : params.trunk) trunk.push_back(iodetail::layer_to_json(l));
  j["trunk"] = std::move(trunk);
  j["matcher"] = iodetail::layer_to_json(params.matcher);
  iodetail::json proj = iodetail::json::array();
  for (const Layer& l : params.projector) proj.push_back(iodetail::layer_to_json(l));
  j["projector"] = std::move(proj);
  iodetail::write_text(path, j.dump(2) + "\n");
}

inline EncoderParams load_checkpoint(const std::filesystem::path& path) {
  iodetail::json j;
  try {
    j = iodetail::json::parse(iodetail::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::io_error, "checkpoint parse error in " + path.string() + ": " + e.what());
  }
  require(j.value("kind", "") == "encoder", Errc::io_error, "checkpoint: wrong kind");
  require(j.value("format_version", 0) == 1, Errc::io_error,
          "checkpoint: unsupported format version");
  EncoderParams p;
  for (const auto& lj : j.at("trunk")) p.trunk.push_back(iodetail::layer_from_json(lj));
  p.matcher = iodetail::layer_from_json(j.at("matcher"));
  for (const auto& lj : j.at("projector")) p.projector.push_back(iodetail::layer_from_json(lj));
  require(!p.trunk.empty() && !p.projector.empty(), Errc::io_error, "checkpoint: missing layers");
  return p;
}

// Corpus directory layout: meta.json, {train,refs,queries,background}.f64
// (row-major 64-bit little-endian reals) and gt.csv ("query_id,ref_id").
inline void save_corpus(const std::filesystem::path& dir, const CopyCorpus& corpus,
                        const std::string& config_echo, bool force) {
  prepare_out_dir(dir, "meta.json", force);

  iodetail::json meta;
  meta["format_version"] = 1;
  meta["seed"] = corpus.seed;
  meta["config"] = config_echo;
  {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : config_echo) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    meta["config_hash"] = iodetail::hash_hex(h);
  }
  meta["d_in"] = corpus.config.d_in;
  meta["counts"] = {{"train", corpus.train.size()},
                    {"refs", corpus.references.size()},
                    {"queries", corpus.queries.size()},
                    {"distractors", corpus.config.n_distractors},
                    {"background", corpus.background.size()},
                    {"gt", corpus.ground_truth.size()}};
  meta["id_base"] = {{"train", corpus.train.front().id},
                     {"refs", corpus.references.front().id},
                     {"queries", corpus.queries.front().id},
                     {"background", corpus.background.front().id}};
  iodetail::json pairs = iodetail::json::array();
  for (const LatentImage& r : corpus.references)
    if (r.partner_id >= 0 && r.id < r.partner_id)
      pairs.push_back({r.id, r.partner_id});
  meta["hn_pairs"] = std::move(pairs);
  iodetail::write_text(dir / "meta.json", meta.dump(2) + "\n");

  iodetail::write_f64(dir / "train.f64", latents_matrix(corpus.train));
  iodetail::write_f64(dir / "refs.f64", latents_matrix(corpus.references));
  iodetail::write_f64(dir / "queries.f64", latents_matrix(corpus.queries));
  iodetail::write_f64(dir / "background.f64", latents_matrix(corpus.background));

  std::string gt = "query_id,ref_id\n";
  for (const GtPair& p : corpus.ground_truth)
    gt += std::to_string(p.query_id) + "," + std::to_string(p.ref_id) + "\n";
  iodetail::write_text(dir / "gt.csv", gt);
}

struct LoadedCorpus {
  CopyCorpus corpus;
  std::string config_echo;
};

inline LoadedCorpus load_corpus(const std::filesystem::path& dir) {
  iodetail::json meta;
  try {
    meta = iodetail::json::parse(iodetail::read_text(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::io_error, "meta.json parse error: " + std::string(e.what()));
  }
  require(meta.value("format_version", 0) == 1, Errc::io_error,
          "corpus: unsupported format version");

  LoadedCorpus loaded;
  loaded.config_echo = meta.at("config").get<std::string>();
  RunConfig run = RunConfig::parse_string(loaded.config_echo);

  CopyCorpus& corpus = loaded.corpus;
  corpus.config = run.data;
  corpus.seed = meta.at("seed").get<std::uint64_t>();

  const auto& counts = meta.at("counts");
  std::size_t n_train = counts.at("train").get<std::size_t>();
  std::size_t n_refs = counts.at("refs").get<std::size_t>();
  std::size_t n_queries = counts.at("queries").get<std::size_t>();
  std::size_t n_background = counts.at("background").get<std::size_t>();
  std::size_t d = meta.at("d_in").get<std::size_t>();

  Mat train = iodetail::read_f64(dir / "train.f64", n_train, d);
  Mat refs = iodetail::read_f64(dir / "refs.f64", n_refs, d);
  Mat queries = iodetail::read_f64(dir / "queries.f64", n_queries, d);
  Mat background = iodetail::read_f64(dir / "background.f64", n_background, d);

  const auto& base = meta.at("id_base");
  auto fill_split = [&](std::vector<LatentImage>& split, const Mat& m, std::int64_t id0,
                        Role role) {
    split.resize(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
      split[i].id = id0 + static_cast<std::int64_t>(i);
      split[i].latent.assign(m.row(i).begin(), m.row(i).end());
      split[i].role = role;
      split[i].partner_id = -1;
    }
  };
  fill_split(corpus.train, train, base.at("train").get<std::int64_t>(), Role::train);
  fill_split(corpus.references, refs, base.at("refs").get<std::int64_t>(), Role::reference);
  fill_split(corpus.queries, queries, base.at("queries").get<std::int64_t>(), Role::distractor);
  fill_split(corpus.background, background, base.at("background").get<std::int64_t>(),
             Role::background);

  std::int64_t ref_base = base.at("refs").get<std::int64_t>();
  for (const auto& pj : meta.at("hn_pairs")) {
    std::int64_t a = pj.at(0).get<std::int64_t>();
    std::int64_t b = pj.at(1).get<std::int64_t>();
    corpus.references.at(static_cast<std::size_t>(a - ref_base)).partner_id = b;
    corpus.references.at(static_cast<std::size_t>(a - ref_base)).role = Role::hard_negative;
    corpus.references.at(static_cast<std::size_t>(b - ref_base)).partner_id = a;
    corpus.references.at(static_cast<std::size_t>(b - ref_base)).role = Role::hard_negative;
  }

  std::string gt_text = iodetail::read_text(dir / "gt.csv");
  std::istringstream gt_in(gt_text);
  std::string line;
  std::getline(gt_in, line);
  require(line == "query_id,ref_id", Errc::io_error, "gt.csv: bad header");
  std::int64_t query_base = base.at("queries").get<std::int64_t>();
  while (std::getline(gt_in, line)) {
    if (line.empty()) continue;
    std::size_t comma = line.find(',');
    require(comma != std::string::npos, Errc::io_error, "gt.csv: bad row");
    GtPair p{std::stoll(line.substr(0, comma)), std::stoll(line.substr(comma + 1))};
    corpus.ground_truth.push_back(p);
    corpus.queries.at(static_cast<std::size_t>(p.query_id - query_base)).role = Role::query_copy;
  }
  return loaded;
}

// report.csv: one row per epoch. report.json adds per-step traces and the
// wall-clock time (the one field excluded from byte-identity comparisons).
inline void save_train_report(const std::filesystem::path& dir, const TrainReport& report,
                              const std::string& config_echo) {
  std::string csv = "epoch,loss_rel,loss_con,loss_hn,loss_total,lr,qT_fill,qS_fill\n";
  for (const EpochRow& e : report.epochs) {
    csv += std::to_string(e.epoch) + "," + iodetail::format_double(e.loss_rel) + "," +
           iodetail::format_double(e.loss_con) + "," + iodetail::format_double(e.loss_hn) + "," +
           iodetail::format_double(e.loss_total) + "," + iodetail::format_double(e.lr) + "," +
           std::to_string(e.qT_fill) + "," + std::to_string(e.qS_fill) + "\n";
  }
  iodetail::write_text(dir / "report.csv", csv);

  iodetail::json j;
  j["format_version"] = 1;
  j["config"] = config_echo;
  j["aborted"] = report.aborted;
  j["abort_reason"] = report.abort_reason;
  j["wall_seconds"] = report.wall_seconds;
  iodetail::json epochs = iodetail::json::array();
  for (const EpochRow& e : report.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"loss_rel", e.loss_rel},
                      {"loss_con", e.loss_con},
                      {"loss_hn", e.loss_hn},
                      {"loss_total", e.loss_total},
                      {"lr", e.lr},
                      {"qT_fill", e.qT_fill},
                      {"qS_fill", e.qS_fill}});
  j["epochs"] = std::move(epochs);
  iodetail::json steps;
  auto column = [&](auto pick) {
    iodetail::json arr = iodetail::json::array();
    for (const StepRow& s : report.steps) arr.push_back(pick(s));
    return arr;
  };
  steps["rel"] = column([](const StepRow& s) { return s.rel; });
  steps["con"] = column([](const StepRow& s) { return s.con; });
  steps["hn"] = column([](const StepRow& s) { return s.hn; });
  steps["total"] = column([](const StepRow& s) { return s.total; });
  steps["lr"] = column([](const StepRow& s) { return s.lr; });
  j["steps"] = std::move(steps);
  iodetail::write_text(dir / "report.json", j.dump(2) + "\n");
}

inline void save_ranked_pairs_csv(const std::filesystem::path& path, const RankedPairList& pairs) {
  std::string csv = "query_id,ref_id,score,is_gt\n";
  for (const PairEntry& e : pairs.entries)
    csv += std::to_string(e.query_id) + "," + std::to_string(e.ref_id) + "," +
           iodetail::format_double(e.score) + "," + (e.is_gt ? "1" : "0") + "\n";
  iodetail::write_text(path, csv);
}

inline void save_spectrum_csv(const std::filesystem::path& path, const SpectrumReport& rep) {
  std::string csv = "index,sigma,log_sigma\n";
  for (std::size_t i = 0; i < rep.singular_values.size(); ++i)
    csv += std::to_string(i) + "," + iodetail::format_double(rep.singular_values[i]) + "," +
           iodetail::format_double(rep.log_values[i]) + "\n";
  iodetail::write_text(path, csv);
}

inline void save_gap_histogram_csv(const std::filesystem::path& path, const GapReport& rep) {
  std::string csv = "bin_lo,bin_hi,count\n";
  for (const GapReport::Bin& b : rep.histogram)
    csv += iodetail::format_double(b.lo) + "," + iodetail::format_double(b.hi) + "," +
           std::to_string(b.count) + "\n";
  iodetail::write_text(path, csv);
}

}  // namespace rdcd
