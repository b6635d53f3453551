#include "ovslink/io.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "ovslink/errors.hpp"
#include "ovslink/flow.hpp"

namespace ovslink::io {
namespace {

std::string at_line(std::uint64_t line_no) {
  return "line " + std::to_string(line_no) + ": ";
}

void append_double(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

void append_float(std::string& out, float v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  out.append(buf, static_cast<std::size_t>(n));
}

const json& field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw InputError(std::string("missing field \"") + key + "\"");
  return *it;
}

double number(const json& j, const char* what) {
  if (!j.is_number()) throw InputError(std::string(what) + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw InputError(std::string(what) + " must be finite");
  return v;
}

std::int64_t integer(const json& j, const char* what) {
  if (!j.is_number_integer()) throw InputError(std::string(what) + " must be an integer");
  return j.get<std::int64_t>();
}

std::uint32_t dimension(const json& j, const char* what) {
  const std::int64_t v = integer(j, what);
  if (v < 0 || v > 1 << 20) throw InputError(std::string(what) + " out of range");
  return static_cast<std::uint32_t>(v);
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("malformed JSON: ") + e.what());
  }
}

InstanceId parse_id(const std::string& key) {
  InstanceId id = 0;
  const auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
  if (ec != std::errc{} || p != key.data() + key.size()) {
    throw InputError("instance id \"" + key + "\" is not an integer");
  }
  return id;
}

Candidate parse_candidate(const json& c, std::uint32_t width, std::uint32_t height) {
  if (!c.is_object()) throw InputError("candidate must be an object");
  Candidate out;
  const json& box = field(c, "box");
  if (!box.is_array() || box.size() != 4) throw InputError("box must have 4 numbers");
  out.box = {number(box[0], "box"), number(box[1], "box"), number(box[2], "box"),
             number(box[3], "box")};
  if (!out.box.valid()) throw InputError("box has min > max");
  out.score = number(field(c, "score"), "score");
  if (out.score < 0.0 || out.score > 1.0) throw InputError("score outside [0, 1]");
  out.mask = rle_from_json(field(c, "rle"));
  if (out.mask.width() != width || out.mask.height() != height) {
    throw DimensionMismatch("candidate mask is " + std::to_string(out.mask.width()) +
                            "x" + std::to_string(out.mask.height()) + ", frame is " +
                            std::to_string(width) + "x" + std::to_string(height));
  }
  if (!box_consistent(out)) {
    throw InputError("box does not match the mask's bounding region");
  }
  const json& emb = field(c, "embedding");
  if (!emb.is_array() || emb.size() != kEmbeddingDim) {
    throw InputError("embedding must have " + std::to_string(kEmbeddingDim) + " numbers");
  }
  std::array<double, kEmbeddingDim> v{};
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) v[i] = number(emb[i], "embedding");
  out.embedding = Embedding(std::span<const double>(v));
  return out;
}

bool parse_bool(std::string_view v, bool& out) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") {
    out = true;
  } else if (v == "false" || v == "off" || v == "0" || v == "no") {
    out = false;
  } else {
    return false;
  }
  return true;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(known.begin(), known.end(),
                     [&](const char* k) { return it.key() == k; })) {
      throw InputError("unknown field \"" + it.key() + "\" in " + where);
    }
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if constexpr (std::is_same_v<T, double>) {
    out = number(*it, key);
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw InputError(std::string(key) + " must be a string");
    out = it->get<std::string>();
  } else {
    const std::int64_t v = integer(*it, key);
    if (v < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
        static_cast<std::uint64_t>(std::max<std::int64_t>(v, 0)) >
            static_cast<std::uint64_t>(std::numeric_limits<T>::max())) {
      throw InputError(std::string(key) + " out of range");
    }
    out = static_cast<T>(v);
  }
}

}  // namespace

json rle_to_json(const BitMask& mask) {
  return json{{"size", {mask.height(), mask.width()}}, {"counts", mask.runs()}};
}

BitMask rle_from_json(const json& j) {
  if (!j.is_object()) throw InputError("RLE must be an object");
  const json& size = field(j, "size");
  if (!size.is_array() || size.size() != 2) {
    throw InputError("RLE size must be [height, width]");
  }
  const std::uint32_t h = dimension(size[0], "RLE height");
  const std::uint32_t w = dimension(size[1], "RLE width");
  const json& counts = field(j, "counts");
  if (!counts.is_array()) throw InputError("RLE counts must be an array");
  std::vector<std::uint32_t> runs;
  runs.reserve(counts.size());
  for (const auto& c : counts) {
    const std::int64_t v = integer(c, "RLE count");
    if (v < 0 || v > std::numeric_limits<std::uint32_t>::max()) {
      throw InputError("RLE count out of range");
    }
    runs.push_back(static_cast<std::uint32_t>(v));
  }
  try {
    return BitMask::from_runs(w, h, runs);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
}

std::string format_candidate_line(const CandidateFrame& frame) {
  std::string out = "{\"frame\":" + std::to_string(frame.frame) +
                    ",\"width\":" + std::to_string(frame.width) +
                    ",\"height\":" + std::to_string(frame.height) + ",\"candidates\":[";
  for (std::size_t i = 0; i < frame.candidates.size(); ++i) {
    const Candidate& c = frame.candidates[i];
    if (i) out += ',';
    out += "{\"box\":[";
    append_double(out, c.box.x_min);
    out += ',';
    append_double(out, c.box.y_min);
    out += ',';
    append_double(out, c.box.x_max);
    out += ',';
    append_double(out, c.box.y_max);
    out += "],\"score\":";
    append_double(out, c.score);
    out += ",\"rle\":";
    out += rle_to_json(c.mask).dump();
    out += ",\"embedding\":[";
    for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
      if (k) out += ',';
      append_float(out, c.embedding[k]);
    }
    out += "]}";
  }
  out += ']';
  if (frame.flow) out += ",\"flow\":" + json(*frame.flow).dump();
  out += '}';
  return out;
}

CandidateFrame parse_candidate_line(std::string_view line, std::uint64_t line_no) {
  try {
    const json j = parse_json(line);
    if (!j.is_object()) throw InputError("expected a JSON object");
    CandidateFrame out;
    out.frame = integer(field(j, "frame"), "frame");
    out.width = dimension(field(j, "width"), "width");
    out.height = dimension(field(j, "height"), "height");
    if (out.width == 0 || out.height == 0) throw InputError("frame size must be positive");
    const json& cands = field(j, "candidates");
    if (!cands.is_array()) throw InputError("candidates must be an array");
    out.candidates.reserve(cands.size());
    for (const auto& c : cands) {
      out.candidates.push_back(parse_candidate(c, out.width, out.height));
    }
    if (auto it = j.find("flow"); it != j.end() && !it->is_null()) {
      if (!it->is_string()) throw InputError("flow must be a string");
      out.flow = it->get<std::string>();
    }
    return out;
  } catch (const DimensionMismatch& e) {
    throw DimensionMismatch(at_line(line_no) + e.what());
  } catch (const InputError& e) {
    throw InputError(at_line(line_no) + e.what());
  }
}

std::string format_mask_frame(const MaskFrame& frame) {
  json masks = json::object();
  for (const auto& [id, m] : frame.masks) masks[std::to_string(id)] = rle_to_json(m);
  return json{{"frame", frame.frame}, {"masks", std::move(masks)}}.dump();
}

MaskFrame parse_mask_frame(std::string_view line, std::uint64_t line_no) {
  try {
    const json j = parse_json(line);
    if (!j.is_object()) throw InputError("expected a JSON object");
    MaskFrame out;
    out.frame = integer(field(j, "frame"), "frame");
    const json& masks = field(j, "masks");
    if (!masks.is_object()) throw InputError("masks must be an object");
    for (auto it = masks.begin(); it != masks.end(); ++it) {
      const InstanceId id = parse_id(it.key());
      if (!out.masks.emplace(id, rle_from_json(it.value())).second) {
        throw InputError("duplicate instance id " + it.key());
      }
    }
    return out;
  } catch (const InputError& e) {
    throw InputError(at_line(line_no) + e.what());
  }
}

std::string format_prediction_line(const FrameResult& result) {
  json masks = json::object();
  json paths = json::object();
  json matches = json::object();
  for (const auto& r : result.instances) {
    const std::string key = std::to_string(r.id);
    masks[key] = rle_to_json(r.mask);
    paths[key] = std::string(to_string(r.path));
    matches[key] = r.matched_candidate ? json(*r.matched_candidate) : json(nullptr);
  }
  return json{{"frame", result.frame_id},
              {"masks", std::move(masks)},
              {"paths", std::move(paths)},
              {"matches", std::move(matches)}}
      .dump();
}

CascadeConfig parse_config(std::string_view text) {
  CascadeConfig c;
  std::uint64_t line_no = 0;
  std::set<std::string> seen;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InputError(at_line(line_no) + "expected key=value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (!seen.insert(key).second) {
      throw InputError(at_line(line_no) + "duplicate key '" + key + "'");
    }
    auto real = [&](double& out) {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || p != value.data() + value.size() || value.empty()) {
        throw InputError(at_line(line_no) + "'" + key + "' needs a number, got '" +
                         value + "'");
      }
      out = v;
    };
    auto flag = [&](bool& out) {
      if (!parse_bool(value, out)) {
        throw InputError(at_line(line_no) + "'" + key + "' needs true/false, got '" +
                         value + "'");
      }
    };
    if (key == "rho_reid") {
      real(c.rho_reid);
    } else if (key == "rho_iou") {
      real(c.rho_iou);
    } else if (key == "quorum") {
      real(c.quorum);
    } else if (key == "score_thresh") {
      real(c.score_thresh);
    } else if (key == "nms_iou") {
      real(c.nms_iou);
    } else if (key == "gallery_capacity") {
      std::size_t v = 0;
      const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || p != value.data() + value.size() || value.empty()) {
        throw InputError(at_line(line_no) + "'gallery_capacity' needs an integer");
      }
      c.gallery_capacity = v;
    } else if (key == "reid_path_enabled") {
      flag(c.reid_path_enabled);
    } else if (key == "append_on_reid") {
      flag(c.append_on_reid);
    } else {
      throw InputError(at_line(line_no) + "unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

CascadeConfig load_config(const fs::path& path) {
  try {
    return parse_config(read_text(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string format_config(const CascadeConfig& c) {
  std::string out;
  out += "rho_reid=" + format_value(c.rho_reid) + "\n";
  out += "rho_iou=" + format_value(c.rho_iou) + "\n";
  out += "quorum=" + format_value(c.quorum) + "\n";
  out += "score_thresh=" + format_value(c.score_thresh) + "\n";
  out += "nms_iou=" + format_value(c.nms_iou) + "\n";
  out += "gallery_capacity=" + std::to_string(c.gallery_capacity) + "\n";
  out += std::string("reid_path_enabled=") + (c.reid_path_enabled ? "true" : "false") + "\n";
  out += std::string("append_on_reid=") + (c.append_on_reid ? "true" : "false") + "\n";
  return out;
}

json scene_to_json(const SceneSpec& s) {
  json objects = json::array();
  for (const auto& o : s.objects) {
    json track = json::array();
    for (const auto& w : o.track) track.push_back({w.t, w.x, w.y});
    objects.push_back({{"id", o.id},
                       {"shape", std::string(to_string(o.shape))},
                       {"width", o.width},
                       {"height", o.height},
                       {"depth", o.depth},
                       {"track", std::move(track)}});
  }
  const DetectorModel& d = s.detector;
  return json{{"name", s.name},
              {"width", s.width},
              {"height", s.height},
              {"frames", s.frames},
              {"seed", s.seed},
              {"objects", std::move(objects)},
              {"embedding",
               {{"centroid_spacing", s.embedding.centroid_spacing},
                {"noise_sigma", s.embedding.noise_sigma}}},
              {"detector",
               {{"miss_prob", d.miss_prob},
                {"fp_rate", d.fp_rate},
                {"jitter", d.jitter},
                {"score_min", d.score_min},
                {"score_max", d.score_max},
                {"fp_score_min", d.fp_score_min},
                {"fp_score_max", d.fp_score_max},
                {"min_visible_fraction", d.min_visible_fraction}}}};
}

SceneSpec scene_from_json(const json& j) {
  if (!j.is_object()) throw InputError("scene must be a JSON object");
  reject_unknown(j, {"name", "width", "height", "frames", "seed", "objects", "embedding",
                     "detector"},
                 "scene");
  SceneSpec s;
  read_opt(j, "name", s.name);
  read_opt(j, "width", s.width);
  read_opt(j, "height", s.height);
  read_opt(j, "frames", s.frames);
  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
      throw InputError("seed must be a non-negative integer");
    }
    s.seed = it->get<std::uint64_t>();
  }
  const json& objects = field(j, "objects");
  if (!objects.is_array()) throw InputError("objects must be an array");
  for (const auto& oj : objects) {
    if (!oj.is_object()) throw InputError("object must be a JSON object");
    reject_unknown(oj, {"id", "shape", "width", "height", "depth", "track"}, "object");
    SceneObject o;
    o.id = integer(field(oj, "id"), "id");
    std::string shape = "rectangle";
    read_opt(oj, "shape", shape);
    const auto parsed = parse_shape(shape);
    if (!parsed) throw InputError("unknown shape '" + shape + "'");
    o.shape = *parsed;
    o.width = dimension(field(oj, "width"), "width");
    o.height = dimension(field(oj, "height"), "height");
    read_opt(oj, "depth", o.depth);
    const json& track = field(oj, "track");
    if (!track.is_array()) throw InputError("track must be an array");
    for (const auto& w : track) {
      if (!w.is_array() || w.size() != 3) throw InputError("waypoint must be [t, x, y]");
      o.track.push_back({integer(w[0], "waypoint t"), number(w[1], "waypoint x"),
                         number(w[2], "waypoint y")});
    }
    s.objects.push_back(std::move(o));
  }
  if (auto it = j.find("embedding"); it != j.end()) {
    reject_unknown(*it, {"centroid_spacing", "noise_sigma"}, "embedding");
    read_opt(*it, "centroid_spacing", s.embedding.centroid_spacing);
    read_opt(*it, "noise_sigma", s.embedding.noise_sigma);
  }
  if (auto it = j.find("detector"); it != j.end()) {
    reject_unknown(*it, {"miss_prob", "fp_rate", "jitter", "score_min", "score_max",
                         "fp_score_min", "fp_score_max", "min_visible_fraction"},
                   "detector");
    DetectorModel& d = s.detector;
    read_opt(*it, "miss_prob", d.miss_prob);
    read_opt(*it, "fp_rate", d.fp_rate);
    read_opt(*it, "jitter", d.jitter);
    read_opt(*it, "score_min", d.score_min);
    read_opt(*it, "score_max", d.score_max);
    read_opt(*it, "fp_score_min", d.fp_score_min);
    read_opt(*it, "fp_score_max", d.fp_score_max);
    read_opt(*it, "min_visible_fraction", d.min_visible_fraction);
  }
  return s;
}

SceneSpec load_scene(const fs::path& path) {
  try {
    return scene_from_json(parse_json(read_text(path)));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

LineReader::LineReader(const fs::path& path) : path_(path), in_(path) {
  if (!in_) throw InputError("cannot open " + path.string());
}

bool LineReader::next(std::string& line) {
  while (std::getline(in_, line)) {
    ++line_no_;
    if (!trim(line).empty()) return true;
  }
  return false;
}

AtomicFile::AtomicFile(fs::path target) : target_(std::move(target)) {
  if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
  temp_ = target_;
  temp_ += ".tmp." + std::to_string(::getpid());
  out_.open(temp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot write " + temp_.string());
}

AtomicFile::~AtomicFile() {
  if (committed_) return;
  out_.close();
  std::error_code ec;
  fs::remove(temp_, ec);
}

void AtomicFile::commit() {
  out_.flush();
  if (!out_) throw std::runtime_error("failed writing " + temp_.string());
  out_.close();
  fs::rename(temp_, target_);
  committed_ = true;
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  AtomicFile f(path);
  f.stream() << contents;
  f.commit();
}

CandidateReader::CandidateReader(const fs::path& candidates, const fs::path& flow_dir,
                                 std::function<void(const std::string&)> warn)
    : lines_(candidates), flow_dir_(flow_dir), have_flow_dir_(fs::is_directory(flow_dir)) {
  if (!have_flow_dir_ && warn) {
    warn("flow directory " + flow_dir.string() +
         " not found; using identity flow for every frame");
  }
}

bool CandidateReader::next(SequenceFrame& out) {
  std::string line;
  if (!lines_.next(line)) return false;
  const std::uint64_t n = lines_.line_number();
  CandidateFrame f = parse_candidate_line(line, n);
  if (frames_read_ == 0) {
    width_ = f.width;
    height_ = f.height;
  } else if (f.width != width_ || f.height != height_) {
    throw DimensionMismatch(at_line(n) + "frame is " + std::to_string(f.width) + "x" +
                            std::to_string(f.height) + ", earlier frames are " +
                            std::to_string(width_) + "x" + std::to_string(height_));
  }
  if (last_frame_ && f.frame <= *last_frame_) {
    throw InputError(at_line(n) + "frame ids must increase (" + std::to_string(f.frame) +
                     " after " + std::to_string(*last_frame_) + ")");
  }
  last_frame_ = f.frame;
  out.frame_id = f.frame;
  out.candidates = std::move(f.candidates);
  out.flow.reset();
  if (f.flow && have_flow_dir_) {
    const fs::path p = flow_dir_ / *f.flow;
    if (!fs::exists(p)) {
      throw InputError(at_line(n) + "flow file " + p.string() + " does not exist");
    }
    FlowField flow = load_flow(p);
    if (flow.width() != width_ || flow.height() != height_) {
      throw DimensionMismatch(at_line(n) + "flow " + p.string() + " is " +
                              std::to_string(flow.width()) + "x" +
                              std::to_string(flow.height()) + ", frame is " +
                              std::to_string(width_) + "x" + std::to_string(height_));
    }
    out.flow = std::move(flow);
  }
  ++frames_read_;
  return true;
}

MaskFrame load_mask_frame(const fs::path& path) {
  try {
    return parse_mask_frame(read_text(path), 1);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<MaskFrame> load_mask_frames(const fs::path& path) {
  LineReader reader(path);
  std::vector<MaskFrame> out;
  std::string line;
  try {
    while (reader.next(line)) out.push_back(parse_mask_frame(line, reader.line_number()));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return out;
}

std::string flow_file_name(std::int64_t frame) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld.ovsf", static_cast<long long>(frame));
  return buf;
}

SimInventory write_sim_dir(const SceneSpec& spec, const fs::path& dir) {
  SceneGenerator gen(spec);
  fs::create_directories(dir / SimFiles::kFlowDir);
  SimInventory inv;
  AtomicFile cands(dir / SimFiles::kCandidates);
  AtomicFile gt(dir / SimFiles::kGroundTruth);
  SimFrame frame;
  while (gen.next(frame)) {
    if (inv.frames == 0) {
      write_file_atomic(dir / SimFiles::kFirstFrame,
                        format_mask_frame({frame.frame_id, frame.truth}) + "\n");
    }
    CandidateFrame line{frame.frame_id, spec.width, spec.height, frame.candidates, {}};
    if (!frame.flow.is_zero()) {
      line.flow = flow_file_name(frame.frame_id);
      save_flow(dir / SimFiles::kFlowDir / *line.flow, frame.flow);
      ++inv.flow_files;
    }
    cands.stream() << format_candidate_line(line) << '\n';
    gt.stream() << format_mask_frame({frame.frame_id, frame.truth}) << '\n';
    ++inv.frames;
    inv.candidates += frame.candidates.size();
    inv.false_positives += static_cast<std::uint64_t>(
        std::count(frame.sources.begin(), frame.sources.end(), std::nullopt));
  }
  cands.commit();
  gt.commit();
  write_file_atomic(dir / SimFiles::kScene, scene_to_json(gen.spec()).dump(2) + "\n");
  inv.files = {dir / SimFiles::kCandidates, dir / SimFiles::kGroundTruth,
               dir / SimFiles::kFirstFrame, dir / SimFiles::kScene};
  return inv;
}

EvalSequence load_sequence(const fs::path& dir) {
  EvalSequence seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  seq.first_masks = load_mask_frame(dir / SimFiles::kFirstFrame).masks;
  CandidateReader reader(dir / SimFiles::kCandidates, dir / SimFiles::kFlowDir);
  SequenceFrame f;
  while (reader.next(f)) seq.frames.push_back(std::move(f));
  seq.truth = load_mask_frames(dir / SimFiles::kGroundTruth);
  if (seq.truth.size() != seq.frames.size()) {
    throw ConsistencyError(dir.string() + ": " + std::to_string(seq.frames.size()) +
                           " candidate frames but " + std::to_string(seq.truth.size()) +
                           " ground-truth frames");
  }
  return seq;
}

}  // namespace ovslink::io
