#pragma once

// File formats: binary weight files, flat key=value configs, CSV output and
// frame sequences on disk.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "patchnet/aggregation.hpp"
#include "patchnet/error.hpp"
#include "patchnet/image.hpp"
#include "patchnet/tracking.hpp"
#include "patchnet/training.hpp"

namespace patchnet {

/// Writes `bytes` to `path` through a sibling temp file and a rename.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Weight files

namespace detail {

inline constexpr std::string_view kWeightMagic = "PNETW1";

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline void put_field(std::string& out, const std::vector<double>& v) {
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (double x : v) put_f64(out, x);
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::vector<double> field(std::size_t expected, const std::string& name) {
    const auto n = u32();
    if (n != expected) {
      throw FormatError("weights: field " + name + " holds " + std::to_string(n) + " values, config needs " +
                        std::to_string(expected));
    }
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("weights: file truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_weights(const ModelParams& p) {
  const auto& c = p.config;
  std::string out(detail::kWeightMagic);
  for (std::size_t v : {c.patches_per_side, c.patch_size, c.template_size, c.search_size, c.corr_stride, c.channels,
                        p.stages.size()}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  detail::put_field(out, p.coeffs.params());
  for (const auto& st : p.stages) {
    detail::put_field(out, st.score_conv.data());
    detail::put_field(out, st.offset_conv.data());
    detail::put_field(out, std::vector<double>(st.pool_bias.begin(), st.pool_bias.end()));
    detail::put_field(out, st.score_mask.data());
    detail::put_field(out, st.offset_mask.data());
  }
  detail::put_field(out, {p.loss_alpha});
  detail::put_field(out, {p.relu ? 1.0 : 0.0});
  return out;
}

inline ModelParams deserialize_weights(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.take(detail::kWeightMagic.size()) != detail::kWeightMagic) throw FormatError("weights: bad magic");
  CorrelationConfig c;
  c.patches_per_side = in.u32();
  c.patch_size = in.u32();
  c.template_size = in.u32();
  c.search_size = in.u32();
  c.corr_stride = in.u32();
  c.channels = in.u32();
  const std::size_t stage_count = in.u32();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("weights: invalid config header: ") + e.what());
  }
  if (stage_count != c.stages()) {
    throw FormatError("weights: header declares " + std::to_string(stage_count) + " stages, config implies " +
                      std::to_string(c.stages()));
  }
  // The initializer provides every shape; the payload overwrites the values.
  auto p = init_params(c, 0, 0.0);
  p.coeffs.params() = in.field(p.coeffs.params().size(), "coeffs");
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    auto& st = p.stages[s];
    const auto tag = "stage" + std::to_string(s + 1) + ".";
    st.score_conv.data() = in.field(st.score_conv.size(), tag + "score_conv");
    st.offset_conv.data() = in.field(st.offset_conv.size(), tag + "offset_conv");
    const auto bias = in.field(st.pool_bias.size(), tag + "pool_bias");
    std::copy(bias.begin(), bias.end(), st.pool_bias.begin());
    st.score_mask.data() = in.field(st.score_mask.size(), tag + "score_mask");
    st.offset_mask.data() = in.field(st.offset_mask.size(), tag + "offset_mask");
  }
  p.loss_alpha = in.field(1, "loss_alpha")[0];
  const double relu = in.field(1, "relu")[0];
  if (relu != 0.0 && relu != 1.0) throw FormatError("weights: relu flag must be 0 or 1");
  p.relu = relu == 1.0;
  if (!in.done()) throw FormatError("weights: trailing bytes after payload");
  return p;
}

inline void save_weights(const std::filesystem::path& path, const ModelParams& p) {
  write_file_atomic(path, serialize_weights(p));
}

inline ModelParams load_weights(const std::filesystem::path& path) { return deserialize_weights(read_file(path)); }

// ---------------------------------------------------------------------------
// key=value configs

/// Everything a training run needs.
struct TrainJob {
  CorrelationConfig model;
  TrainConfig train;
  bool relu = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view text, const std::string& where) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw FormatError(where + "cannot parse '" + std::string(text) + "'");
  return v;
}

inline bool parse_bool(std::string_view text, const std::string& where) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw FormatError(where + "expected true/false, got '" + std::string(text) + "'");
}

}  // namespace detail

/// Parses flat `key = value` lines; '#' starts a comment. Errors name `source:line`.
inline TrainJob parse_config(std::string_view text, const std::string& source = "config") {
  TrainJob job;
  auto& m = job.model;
  auto& t = job.train;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError(where + "expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const auto val = detail::trim(line.substr(eq + 1));
    if (val.empty()) throw FormatError(where + "missing value for '" + key + "'");

    const auto sz = [&] { return detail::parse_number<std::size_t>(val, where); };
    const auto real = [&] { return detail::parse_number<double>(val, where); };
    if (key == "patches_per_side") m.patches_per_side = sz();
    else if (key == "patch_size") m.patch_size = sz();
    else if (key == "template_size") m.template_size = sz();
    else if (key == "search_size") m.search_size = sz();
    else if (key == "corr_stride") m.corr_stride = sz();
    else if (key == "channels") m.channels = sz();
    else if (key == "alpha") t.alpha = real();
    else if (key == "lr") t.lr = real();
    else if (key == "momentum") t.momentum = real();
    else if (key == "batch_size") t.batch_size = sz();
    else if (key == "steps") t.steps = sz();
    else if (key == "smooth_l1_beta") t.smooth_l1_beta = real();
    else if (key == "loss_balance") t.loss_balance = real();
    else if (key == "seed") t.seed = detail::parse_number<std::uint64_t>(val, where);
    else if (key == "fourier") t.variant.fourier = detail::parse_bool(val, where);
    else if (key == "bbox") t.variant.bbox = detail::parse_bool(val, where);
    else if (key == "relu") job.relu = detail::parse_bool(val, where);
    else if (key == "max_translation") t.motion.max_translation = real();
    else if (key == "scale_min") t.motion.scale_min = real();
    else if (key == "scale_max") t.motion.scale_max = real();
    else if (key == "brightness_jitter") t.motion.brightness_jitter = real();
    else throw FormatError(where + "unknown key '" + key + "'");
  }
  try {
    m.validate();
    t.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(source + ": " + e.what());
  }
  if (!(t.motion.scale_min > 0.0 && t.motion.scale_min <= t.motion.scale_max)) {
    throw FormatError(source + ": need 0 < scale_min <= scale_max");
  }
  return job;
}

inline TrainJob load_config(const std::filesystem::path& path) { return parse_config(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// CSV

/// Builds RFC-4180 text in memory; numbers use the shortest round-trip form.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) : columns_(header.size()) { row(header); }

  CsvWriter& row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) {
      throw InvalidArgument("CsvWriter: row has " + std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(columns_));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += quote(cells[i]);
    }
    text_ += "\r\n";
    return *this;
  }

  const std::string& str() const { return text_; }
  void save(const std::filesystem::path& path) const { write_file_atomic(path, text_); }

  static std::string num(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  }
  static std::string num(std::uint64_t v) { return std::to_string(v); }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + '"';
  }

  std::size_t columns_;
  std::string text_;
};

// ---------------------------------------------------------------------------
// Frame sequences

struct Sequence {
  std::vector<std::filesystem::path> frames;
  // groundtruth[t] lists every object present in frame t.
  std::vector<std::vector<Detection>> groundtruth;
};

inline std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu.ppm", index);
  return buf;
}

/// Reads a frame_%06d.ppm directory plus groundtruth.txt. Groundtruth lines are
/// grouped by frame: each frame lists the same set of object ids once.
inline Sequence read_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("sequence: " + dir.string() + " is not a directory");
  std::size_t max_index = 0, count = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() != 16 || name.rfind("frame_", 0) != 0 || name.substr(12) != ".ppm") continue;
    std::size_t idx = 0;
    const auto digits = std::string_view(name).substr(6, 6);
    if (std::from_chars(digits.data(), digits.data() + 6, idx).ptr != digits.data() + 6) continue;
    max_index = std::max(max_index, idx);
    ++count;
  }
  if (count == 0) throw FormatError("sequence: no frame_%06d.ppm files in " + dir.string());
  Sequence seq;
  for (std::size_t i = 0; i <= max_index; ++i) {
    const auto p = dir / frame_name(i);
    if (!std::filesystem::exists(p)) throw FormatError("sequence: missing frame " + p.filename().string());
    seq.frames.push_back(p);
  }

  const auto gt_path = dir / "groundtruth.txt";
  const auto text = read_file(gt_path);
  std::vector<Detection> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const std::string where = gt_path.string() + ":" + std::to_string(line_no) + ": ";
    std::vector<std::string_view> f;
    std::size_t a = 0;
    while (true) {
      const auto b = t.find(',', a);
      f.push_back(detail::trim(t.substr(a, b == std::string_view::npos ? std::string_view::npos : b - a)));
      if (b == std::string_view::npos) break;
      a = b + 1;
    }
    if (f.size() != 5) throw FormatError(where + "expected object_id,x_min,y_min,x_max,y_max");
    Detection d{detail::parse_number<int>(f[0], where),
                {detail::parse_number<double>(f[1], where), detail::parse_number<double>(f[2], where),
                 detail::parse_number<double>(f[3], where), detail::parse_number<double>(f[4], where), 1.0}};
    if (!d.box.valid()) throw FormatError(where + "box has non-positive area");
    rows.push_back(d);
  }
  std::vector<int> ids;
  for (const auto& r : rows) {
    if (std::find(ids.begin(), ids.end(), r.object_id) == ids.end()) ids.push_back(r.object_id);
  }
  if (ids.empty() || rows.size() != ids.size() * seq.frames.size()) {
    throw FormatError("sequence: groundtruth has " + std::to_string(rows.size()) + " lines, expected " +
                      std::to_string(ids.size()) + " objects x " + std::to_string(seq.frames.size()) + " frames");
  }
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    std::vector<Detection> group(rows.begin() + static_cast<std::ptrdiff_t>(f * ids.size()),
                                 rows.begin() + static_cast<std::ptrdiff_t>((f + 1) * ids.size()));
    for (int id : ids) {
      if (std::count_if(group.begin(), group.end(), [id](const Detection& d) { return d.object_id == id; }) != 1) {
        throw FormatError("sequence: frame " + std::to_string(f) + " must list object " + std::to_string(id) +
                          " exactly once");
      }
    }
    seq.groundtruth.push_back(std::move(group));
  }
  return seq;
}

/// Writes frames and groundtruth in the layout read_sequence expects.
inline void write_sequence(const std::filesystem::path& dir, const std::vector<Image>& frames,
                           const std::vector<std::vector<Detection>>& groundtruth) {
  if (frames.size() != groundtruth.size()) throw InvalidArgument("write_sequence: frame/groundtruth count mismatch");
  std::filesystem::create_directories(dir);
  std::string gt;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    write_ppm(dir / frame_name(i), frames[i]);
    for (const auto& d : groundtruth[i]) {
      gt += std::to_string(d.object_id) + "," + CsvWriter::num(d.box.x_min) + "," + CsvWriter::num(d.box.y_min) + "," +
            CsvWriter::num(d.box.x_max) + "," + CsvWriter::num(d.box.y_max) + "\n";
    }
  }
  write_file_atomic(dir / "groundtruth.txt", gt);
}

}  // namespace patchnet
