#include "ovslink/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ovslink/errors.hpp"
#include "ovslink/eval.hpp"
#include "ovslink/io.hpp"
#include "ovslink/reid.hpp"

namespace ovslink::cli {
namespace {

using io::json;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// --- run ---------------------------------------------------------------------

void write_ppm(const fs::path& path, const FrameResult& result, std::uint32_t w,
               std::uint32_t h) {
  static constexpr std::uint8_t kPalette[][3] = {
      {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}};
  std::vector<std::uint8_t> rgb(std::size_t{w} * h * 3, 0);
  for (std::size_t k = 0; k < result.instances.size(); ++k) {
    const auto& colour = kPalette[k % std::size(kPalette)];
    const BitMask& m = result.instances[k].mask;
    std::uint64_t pos = 0;
    for (std::size_t r = 0; r < m.runs().size(); ++r) {
      const std::uint32_t len = m.runs()[r];
      if (r % 2 == 1) {
        for (std::uint64_t p = pos; p < pos + len; ++p) {
          const std::uint64_t x = p / h;
          const std::uint64_t y = p % h;
          std::copy(colour, colour + 3, &rgb[(y * w + x) * 3]);
        }
      }
      pos += len;
    }
  }
  io::AtomicFile f(path);
  f.stream() << "P6\n" << w << ' ' << h << "\n255\n";
  f.stream().write(reinterpret_cast<const char*>(rgb.data()),
                   static_cast<std::streamsize>(rgb.size()));
  f.commit();
}

void add_overrides(CLI::App* cmd, PresetOptions& o) {
  cmd->add_option("--width", o.width, "Frame width in pixels");
  cmd->add_option("--height", o.height, "Frame height in pixels");
  cmd->add_option("--frames", o.frames, "Number of frames");
  cmd->add_option("--objects", o.objects, "Object count (crowd only)");
  cmd->add_option("--fp-rate", o.fp_rate, "Mean false positives per frame");
  cmd->add_option("--noise-sigma", o.noise_sigma, "Embedding noise (RMS norm)");
}

void apply_overrides(SceneSpec& s, const PresetOptions& o) {
  if (o.objects) throw std::invalid_argument("--objects only applies to the crowd preset");
  if (o.width) s.width = *o.width;
  if (o.height) s.height = *o.height;
  if (o.frames) s.frames = *o.frames;
  if (o.fp_rate) s.detector.fp_rate = *o.fp_rate;
  if (o.noise_sigma) s.embedding.noise_sigma = *o.noise_sigma;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') {
      throw std::invalid_argument(std::string(what) + ": cannot parse '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument(std::string(what) + " is empty");
  return out;
}

std::vector<bool> parse_switches(const std::string& text) {
  std::vector<bool> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "on") {
      out.push_back(true);
    } else if (item == "off") {
      out.push_back(false);
    } else {
      throw std::invalid_argument("--reid takes on/off, got '" + item + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("--reid is empty");
  return out;
}

std::size_t thread_cap() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("OVSLINK_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) {
      throw std::invalid_argument(std::string("OVSLINK_THREADS must be a positive integer, got '") +
                                  env + "'");
    }
    n = std::min(n, static_cast<std::size_t>(v));
  }
  return n;
}

std::string read_cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto v = line.substr(colon + 1);
        v.erase(0, v.find_first_not_of(' '));
        return v;
      }
    }
  }
  return "unknown cpu";
}

struct Loaded {
  std::map<InstanceId, BitMask> first;
  std::vector<SequenceFrame> frames;
};

Loaded load_for_bench(const BenchRequest& req) {
  Loaded out;
  if (req.scene) {
    SceneGenerator gen(*req.scene);
    SimFrame f;
    while (gen.next(f)) {
      if (out.frames.empty()) out.first = f.truth;
      SequenceFrame s{f.frame_id, std::move(f.candidates), std::nullopt};
      if (!f.flow.is_zero()) s.flow = std::move(f.flow);
      out.frames.push_back(std::move(s));
    }
    return out;
  }
  const fs::path dir = *req.sequence_dir;
  out.first = io::load_mask_frame(dir / io::SimFiles::kFirstFrame).masks;
  io::CandidateReader reader(dir / io::SimFiles::kCandidates, dir / io::SimFiles::kFlowDir);
  SequenceFrame f;
  while (reader.next(f)) out.frames.push_back(std::move(f));
  if (out.frames.empty()) throw InputError("sequence has no frames");
  return out;
}

// Common flags shared by every subcommand.
struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;

  CascadeConfig cascade() const {
    return config ? io::load_config(*config) : CascadeConfig{};
  }
  fs::path out_or(const fs::path& fallback) const {
    return out ? fs::path(*out) : fallback;
  }
};

// --- subcommand bodies ----------------------------------------------------------

int do_run(const Globals& g, const std::string& seq_dir, const std::string& candidates,
           const std::string& flow_dir, const std::string& first,
           const std::string& dump, std::ostream& out, std::ostream& err) {
  RunRequest req;
  const fs::path dir = seq_dir;
  if (seq_dir.empty() && (candidates.empty() || first.empty())) {
    throw std::invalid_argument(
        "run needs a sequence directory or both --candidates and --first-frame");
  }
  req.candidates = candidates.empty() ? dir / io::SimFiles::kCandidates : fs::path(candidates);
  req.first_frame = first.empty() ? dir / io::SimFiles::kFirstFrame : fs::path(first);
  req.flow_dir = !flow_dir.empty() ? fs::path(flow_dir)
                 : !seq_dir.empty() ? dir / io::SimFiles::kFlowDir
                                    : req.candidates.parent_path() / io::SimFiles::kFlowDir;
  req.output = g.out_or(seq_dir.empty() ? fs::path("predictions.jsonl")
                                        : dir / "predictions.jsonl");
  req.config = g.cascade();
  if (!dump.empty()) req.dump_masks = fs::path(dump);
  req.quiet = g.quiet;
  const RunSummary s = cmd_run(req, err);
  if (!g.quiet) {
    out << "frames=" << s.frames << " instances=" << s.instances << " iou=" << s.iou
        << " reid=" << s.reid << " flow=" << s.flow << " mean_us=" << fixed(s.mean_us, 1)
        << " -> " << req.output.string() << '\n';
  }
  return kExitOk;
}

int do_sim(const Globals& g, const std::string& preset_name, const std::string& spec_path,
           const PresetOptions& overrides, std::ostream& out) {
  SceneSpec spec;
  if (!spec_path.empty()) {
    if (!preset_name.empty()) throw std::invalid_argument("give a preset or --spec, not both");
    spec = io::load_scene(spec_path);
    if (g.seed) spec.seed = *g.seed;
    apply_overrides(spec, overrides);
    spec.validate();
  } else {
    if (preset_name.empty()) throw std::invalid_argument("sim needs a preset name or --spec");
    spec = preset(preset_name, g.seed.value_or(0), overrides);
  }
  const fs::path dir = g.out_or(spec.name);
  const io::SimInventory inv = io::write_sim_dir(spec, dir);
  if (!g.quiet) {
    for (const auto& f : inv.files) {
      out << f.string() << "  " << fs::file_size(f) << " bytes\n";
    }
    out << (dir / io::SimFiles::kFlowDir).string() << "/  " << inv.flow_files
        << " flow files\n";
    out << inv.frames << " frames, " << inv.candidates << " candidates ("
        << inv.false_positives << " false positives)\n";
  }
  return kExitOk;
}

int do_eval(const Globals& g, const std::string& pred_path, const std::string& gt_path,
            std::optional<std::uint32_t> tolerance, std::ostream& out) {
  io::LineReader pred(pred_path);
  io::LineReader gt(gt_path);
  SequenceScorer scorer(tolerance);
  std::string pl;
  std::string gl;
  while (true) {
    const bool hp = pred.next(pl);
    const bool hg = gt.next(gl);
    if (!hp && !hg) break;
    if (!hp && pred.line_number() == 0) {
      throw InputError(pred_path + ": prediction file is empty");
    }
    if (hp != hg) {
      throw ConsistencyError(std::string(hp ? "ground truth" : "prediction") +
                             " ends first (after " +
                             std::to_string(scorer.frames_seen()) + " frames)");
    }
    MaskFrame p;
    MaskFrame t;
    try {
      p = io::parse_mask_frame(pl, pred.line_number());
    } catch (const InputError& e) {
      throw InputError(pred_path + ": " + e.what());
    }
    try {
      t = io::parse_mask_frame(gl, gt.line_number());
    } catch (const InputError& e) {
      throw InputError(gt_path + ": " + e.what());
    }
    scorer.add(p, t);
  }
  if (scorer.frames_seen() == 0) throw InputError(pred_path + ": prediction file is empty");
  const SequenceScore s = scorer.finish();
  char line[96];
  std::snprintf(line, sizeof line, "J=%.3f F=%.3f G=%.3f", s.j_mean, s.f_mean, s.g_mean);
  out << line << '\n';
  if (g.out) {
    io::AtomicFile csv{fs::path(*g.out)};
    csv.stream() << "instance,J,F,G\n";
    for (const auto& i : s.instances) {
      csv.stream() << i.id << ',' << fixed(i.j, 6) << ',' << fixed(i.f, 6) << ','
                   << fixed((i.j + i.f) / 2.0, 6) << '\n';
    }
    csv.stream() << "mean," << fixed(s.j_mean, 6) << ',' << fixed(s.f_mean, 6) << ','
                 << fixed(s.g_mean, 6) << '\n';
    csv.commit();
  }
  return kExitOk;
}

int do_bench(const Globals& g, const std::string& seq_dir, const std::string& preset_name,
             const PresetOptions& overrides, std::uint64_t repetitions,
             const std::string& baseline, std::ostream& out, std::ostream& err) {
  BenchRequest req;
  if (!seq_dir.empty() == !preset_name.empty()) {
    throw std::invalid_argument("bench needs exactly one of a sequence directory or --preset");
  }
  if (!seq_dir.empty()) req.sequence_dir = fs::path(seq_dir);
  if (!preset_name.empty()) req.scene = preset(preset_name, g.seed.value_or(0), overrides);
  req.repetitions = repetitions;
  req.config = g.cascade();
  const BenchReport r = cmd_bench(req);
  const std::string report = report_to_json(r);
  if (g.out) io::write_file_atomic(*g.out, report);
  if (!g.quiet) {
    out << "frames       " << r.frames << " x " << r.repetitions << " repetitions\n"
        << "median       " << fixed(r.median_us, 1) << " us\n"
        << "p95          " << fixed(r.p95_us, 1) << " us\n"
        << "mean         " << fixed(r.mean_us, 1) << " us\n"
        << "fps          " << fixed(r.fps, 1) << '\n'
        << "instances    " << r.instances << '\n'
        << "candidates   " << fixed(r.candidates_per_frame, 1) << " per frame (max "
        << r.max_candidates << ")\n"
        << "machine      " << r.machine << '\n';
  }
  if (!baseline.empty()) {
    if (!fs::exists(baseline)) {
      io::write_file_atomic(baseline, report);
      if (!g.quiet) out << "baseline recorded at " << baseline << '\n';
    } else {
      const json base = json::parse(io::read_text(baseline), nullptr, false);
      if (base.is_discarded() || !base.contains("median_us") ||
          !base["median_us"].is_number()) {
        throw InputError(baseline + ": not a bench report");
      }
      const double limit = 2.0 * base["median_us"].get<double>();
      if (r.median_us > limit) {
        err << "regression: median " << fixed(r.median_us, 1) << " us exceeds 2x baseline ("
            << fixed(limit, 1) << " us)\n";
        return kExitConsistency;
      }
      if (!g.quiet) {
        out << "within 2x of baseline (" << fixed(limit / 2.0, 1) << " us)\n";
      }
    }
  }
  return kExitOk;
}

int do_ablate(const Globals& g, const std::string& root, const std::string& rho_reid,
              const std::string& rho_iou, const std::string& reid,
              std::optional<std::size_t> threads, std::ostream& out) {
  const CascadeConfig base = g.cascade();
  const auto reid_values = rho_reid.empty() ? std::vector<double>{base.rho_reid}
                                            : parse_list(rho_reid, "--rho-reid");
  const auto iou_values = rho_iou.empty() ? std::vector<double>{base.rho_iou}
                                          : parse_list(rho_iou, "--rho-iou");
  const auto switches =
      reid.empty() ? std::vector<bool>{base.reid_path_enabled} : parse_switches(reid);
  std::vector<CascadeConfig> grid;
  for (const bool on : switches) {
    for (const double rr : reid_values) {
      for (const double ri : iou_values) {
        CascadeConfig c = base;
        c.rho_reid = rr;
        c.rho_iou = ri;
        c.reid_path_enabled = on;
        c.validate();
        grid.push_back(c);
      }
    }
  }

  std::vector<fs::path> dirs;
  const fs::path rootp = root;
  if (fs::exists(rootp / io::SimFiles::kCandidates)) {
    dirs.push_back(rootp);
  } else if (fs::is_directory(rootp)) {
    for (const auto& e : fs::directory_iterator(rootp)) {
      if (e.is_directory() && fs::exists(e.path() / io::SimFiles::kCandidates)) {
        dirs.push_back(e.path());
      }
    }
  } else {
    throw InputError(root + " is not a directory");
  }
  if (dirs.empty()) throw InputError(root + " contains no sequences");
  std::sort(dirs.begin(), dirs.end());
  std::vector<EvalSequence> seqs;
  seqs.reserve(dirs.size());
  for (const auto& d : dirs) seqs.push_back(io::load_sequence(d));

  std::size_t workers = thread_cap();
  if (threads) workers = std::min(workers, std::max<std::size_t>(1, *threads));
  const auto rows = ablation_sweep(seqs, grid, workers);
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  if (g.out) io::write_file_atomic(*g.out, csv.str());
  if (!g.quiet || !g.out) out << csv.str();
  return kExitOk;
}

int do_train(const Globals& g, const std::string& samples_path, const TrainOptions& base,
             const std::string& loss_csv, std::ostream& out) {
  io::LineReader reader(samples_path);
  std::vector<std::vector<double>> rows;
  std::vector<InstanceId> labels;
  std::string line;
  while (reader.next(line)) {
    const std::string where = samples_path + ": line " + std::to_string(reader.line_number());
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw InputError(where + ": malformed JSON");
    if (!j.contains("label") || !j["label"].is_number_integer()) {
      throw InputError(where + ": \"label\" must be an integer");
    }
    if (!j.contains("feature") || !j["feature"].is_array() || j["feature"].empty()) {
      throw InputError(where + ": \"feature\" must be a non-empty array");
    }
    std::vector<double> f;
    for (const auto& v : j["feature"]) {
      if (!v.is_number() || !std::isfinite(v.get<double>())) {
        throw InputError(where + ": feature values must be finite numbers");
      }
      f.push_back(v.get<double>());
    }
    if (!rows.empty() && f.size() != rows.front().size()) {
      throw InputError(where + ": feature has " + std::to_string(f.size()) +
                       " values, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(f));
    labels.push_back(j["label"].get<InstanceId>());
  }
  if (rows.empty()) throw InputError(samples_path + ": no samples");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  }
  TrainOptions opts = base;
  opts.seed = g.seed.value_or(0);
  const TrainResult r = train_projection(x, labels, opts);

  json matrix = json::array();
  for (Eigen::Index i = 0; i < r.projection.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < r.projection.cols(); ++k) row.push_back(r.projection(i, k));
    matrix.push_back(std::move(row));
  }
  const json doc{{"rows", r.projection.rows()},
                 {"cols", r.projection.cols()},
                 {"seed", opts.seed},
                 {"steps", opts.steps},
                 {"initial_loss", r.initial_loss},
                 {"final_loss", r.final_loss},
                 {"matrix", std::move(matrix)}};
  const fs::path out_path = g.out_or("projection.json");
  fs::path csv_path = loss_csv;
  if (csv_path.empty()) {
    csv_path = out_path;
    csv_path.replace_extension(".loss.csv");
  }
  io::write_file_atomic(out_path, doc.dump() + "\n");
  {
    io::AtomicFile csv(csv_path);
    csv.stream() << "step,loss\n";
    char buf[64];
    for (std::size_t s = 0; s < r.loss_history.size(); ++s) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", s, r.loss_history[s]);
      csv.stream() << buf;
    }
    csv.commit();
  }
  if (!g.quiet) {
    out << "samples=" << rows.size() << " dims=" << rows.front().size() << "->"
        << opts.out_dim << " initial_loss=" << fixed(r.initial_loss, 6)
        << " final_loss=" << fixed(r.final_loss, 6) << '\n'
        << "wrote " << out_path.string() << " and " << csv_path.string() << '\n';
  }
  return kExitOk;
}

}  // namespace

RunSummary cmd_run(const RunRequest& req, std::ostream& log) {
  const MaskFrame first = io::load_mask_frame(req.first_frame);
  if (first.masks.empty()) throw InputError(req.first_frame.string() + ": no instances");
  io::CandidateReader reader(req.candidates, req.flow_dir, [&](const std::string& msg) {
    if (!req.quiet) log << "warning: " << msg << '\n';
  });
  if (req.dump_masks) fs::create_directories(*req.dump_masks);

  CascadeEngine engine(req.config);
  io::AtomicFile preds(req.output);
  RunSummary s;
  std::string line;
  const StreamStats stats = run_stream(
      engine, first.masks, [&](SequenceFrame& f) { return reader.next(f); },
      [&](const FrameResult& r, double) {
        for (const auto& inst : r.instances) {
          switch (inst.path) {
            case Path::Iou: ++s.iou; break;
            case Path::Reid: ++s.reid; break;
            case Path::Flow: ++s.flow; break;
          }
        }
        line = io::format_prediction_line(r);
        line += '\n';
        preds.stream() << line;
        if (req.dump_masks) {
          fs::path ppm = *req.dump_masks / io::flow_file_name(r.frame_id);
          ppm.replace_extension(".ppm");
          write_ppm(ppm, r,
                    engine.frame_width(), engine.frame_height());
        }
      });
  preds.commit();

  s.frames = engine.frames_processed();
  s.lines_read = reader.frames_read();
  s.instances = engine.instances().size();
  s.mean_us = stats.frames ? stats.total_us / static_cast<double>(stats.frames) : 0.0;
  s.max_us = stats.max_us;
  fs::path summary_path = req.output;
  summary_path += ".summary.json";
  const json summary{{"frames", s.frames},
                     {"instances", s.instances},
                     {"paths", {{"IOU", s.iou}, {"REID", s.reid}, {"FLOW", s.flow}}},
                     {"mean_us", s.mean_us},
                     {"max_us", s.max_us},
                     {"inputs",
                      {{"candidates", req.candidates.string()},
                       {"flow_dir", req.flow_dir.string()},
                       {"first_frame", req.first_frame.string()}}},
                     {"config", io::format_config(req.config)}};
  io::write_file_atomic(summary_path, summary.dump(2) + "\n");
  return s;
}

void summarize_latencies(BenchReport& r) {
  if (r.latencies_us.empty()) throw std::invalid_argument("no latency samples");
  std::vector<double> sorted = r.latencies_us;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median_us = n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  r.p95_us = sorted[std::max<std::size_t>(rank, 1) - 1];
  r.mean_us = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  r.fps = r.mean_us > 0.0 ? 1e6 / r.mean_us : 0.0;
}

std::string machine_descriptor() {
  std::string d = read_cpu_model();
  d += " | " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
#if defined(__clang__)
  d += " | clang " __clang_version__;
#elif defined(__GNUC__)
  d += " | gcc " __VERSION__;
#endif
#ifdef NDEBUG
  d += " | optimized";
#else
  d += " | debug";
#endif
  return d;
}

BenchReport cmd_bench(const BenchRequest& req) {
  if (req.repetitions == 0) throw std::invalid_argument("repetitions must be positive");
  if (!req.sequence_dir && !req.scene) throw std::invalid_argument("nothing to benchmark");
  const Loaded data = load_for_bench(req);

  BenchReport r;
  r.frames = data.frames.size();
  r.repetitions = req.repetitions;
  r.instances = data.first.size();
  std::uint64_t total = 0;
  for (const auto& f : data.frames) {
    total += f.candidates.size();
    r.max_candidates = std::max<std::uint64_t>(r.max_candidates, f.candidates.size());
  }
  r.candidates_per_frame = static_cast<double>(total) / static_cast<double>(r.frames);
  r.latencies_us.reserve(r.frames * r.repetitions);

  std::vector<FrameResult> reference;
  for (std::uint64_t rep = 0; rep < req.repetitions; ++rep) {
    CascadeEngine engine(req.config);
    std::size_t k = 0;
    run_stream(engine, data.first, frames_from(data.frames),
               [&](const FrameResult& res, double us) {
                 r.latencies_us.push_back(us);
                 if (rep == 0) {
                   reference.push_back(res);
                 } else if (!(reference[k] == res)) {
                   throw ConsistencyError("repetition " + std::to_string(rep) +
                                          " disagrees with the first at frame " +
                                          std::to_string(res.frame_id));
                 }
                 ++k;
               });
  }
  summarize_latencies(r);
  r.machine = machine_descriptor();
  return r;
}

std::string report_to_json(const BenchReport& r) {
  const json doc{{"frames", r.frames},
                 {"repetitions", r.repetitions},
                 {"samples", r.latencies_us.size()},
                 {"median_us", r.median_us},
                 {"p95_us", r.p95_us},
                 {"mean_us", r.mean_us},
                 {"fps", r.fps},
                 {"instances", r.instances},
                 {"candidates_per_frame", r.candidates_per_frame},
                 {"max_candidates", r.max_candidates},
                 {"machine", r.machine},
                 {"latencies_us", r.latencies_us}};
  return doc.dump(2) + "\n";
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Link per-frame candidate masks into instance tracks", "ovslink"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key=value cascade config file");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output path");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  std::string run_dir, run_cands, run_flow, run_first, run_dump;
  auto* run = app.add_subcommand("run", "Associate a candidate stream");
  run->add_option("sequence", run_dir, "Simulator-style sequence directory");
  run->add_option("--candidates", run_cands, "Candidate JSON-lines file");
  run->add_option("--flow-dir", run_flow, "Directory holding flow files");
  run->add_option("--first-frame", run_first, "First-frame instance masks");
  run->add_option("--dump-masks", run_dump, "Write one PPM per frame here");

  std::string sim_preset, sim_spec;
  PresetOptions sim_over;
  auto* sim = app.add_subcommand("sim", "Generate a synthetic sequence");
  sim->add_option("preset", sim_preset, "crossing, exit-reenter, crowd or static");
  sim->add_option("--spec", sim_spec, "Scene description JSON");
  add_overrides(sim, sim_over);

  std::string eval_pred, eval_gt;
  std::optional<std::uint32_t> eval_tol;
  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  ev->add_option("pred", eval_pred, "Prediction JSON-lines")->required();
  ev->add_option("gt", eval_gt, "Ground-truth JSON-lines")->required();
  ev->add_option("--tolerance", eval_tol, "Contour tolerance in pixels");

  std::string bench_dir, bench_preset, bench_baseline;
  std::uint64_t bench_reps = 5;
  PresetOptions bench_over;
  auto* bench = app.add_subcommand("bench", "Time association on a memory-resident sequence");
  bench->add_option("sequence", bench_dir, "Sequence directory");
  bench->add_option("--preset", bench_preset, "Generate this preset in memory instead");
  bench->add_option("--repetitions", bench_reps, "Passes over the sequence");
  bench->add_option("--baseline", bench_baseline,
                    "Baseline report; recorded if missing, else gate at 2x its median");
  add_overrides(bench, bench_over);

  std::string abl_root, abl_rr, abl_ri, abl_reid;
  std::optional<std::size_t> abl_threads;
  auto* ablate = app.add_subcommand("ablate", "Sweep thresholds over a set of sequences");
  ablate->add_option("sequences", abl_root, "Directory of sequence directories")->required();
  ablate->add_option("--rho-reid", abl_rr, "Comma-separated rho_reid values");
  ablate->add_option("--rho-iou", abl_ri, "Comma-separated rho_iou values");
  ablate->add_option("--reid", abl_reid, "on, off or on,off");
  ablate->add_option("--threads", abl_threads, "Worker threads");

  std::string train_samples, train_csv;
  TrainOptions train_opts;
  auto* train = app.add_subcommand("train-embed", "Fit a linear embedding with triplet loss");
  train->add_option("samples", train_samples, "JSON-lines of {label, feature}")->required();
  train->add_option("--out-dim", train_opts.out_dim, "Embedding dimension");
  train->add_option("--steps", train_opts.steps, "Gradient steps");
  train->add_option("--lr", train_opts.learn_rate, "Learning rate");
  train->add_option("--batch-size", train_opts.batch_size, "Samples per step");
  train->add_option("--alpha", train_opts.alpha, "Triplet margin");
  train->add_option("--loss-csv", train_csv, "Loss curve output");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }

  try {
    if (*run) return do_run(g, run_dir, run_cands, run_flow, run_first, run_dump, out, err);
    if (*sim) return do_sim(g, sim_preset, sim_spec, sim_over, out);
    if (*ev) return do_eval(g, eval_pred, eval_gt, eval_tol, out);
    if (*bench) {
      return do_bench(g, bench_dir, bench_preset, bench_over, bench_reps, bench_baseline,
                      out, err);
    }
    if (*ablate) return do_ablate(g, abl_root, abl_rr, abl_ri, abl_reid, abl_threads, out);
    if (*train) return do_train(g, train_samples, train_opts, train_csv, out);
  } catch (const ConsistencyError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConsistency;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace ovslink::cli
