#include "ftf/formats.hpp"

#include "ftf/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace ftf {

using Json = nlohmann::ordered_json;

// ---- files ---------------------------------------------------------------------

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

// ---- small text helpers ------------------------------------------------------------

std::string_view trim(std::string_view s) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

std::string_view strip_comment(std::string_view s) {
  const auto pos = s.find('#');
  return pos == std::string_view::npos ? s : s.substr(0, pos);
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string_view> split_char(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> try_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

double number(std::string_view s, const std::string& source, std::size_t line) {
  const auto v = try_number(s);
  if (!v || !std::isfinite(*v)) throw ParseError(source, line, "expected a finite number, got '" + std::string(s) + "'");
  return *v;
}

std::uint64_t unsigned_number(std::string_view s, const std::string& source, std::size_t line) {
  s = trim(s);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ParseError(source, line, "expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

bool boolean(std::string_view s, const std::string& source, std::size_t line) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ParseError(source, line, "expected a boolean, got '" + std::string(s) + "'");
}

std::string num(double v) { return fmt::format("{}", v); }

// ---- json helpers ---------------------------------------------------------------------

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json points_json(const std::vector<Vec3>& pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back(vec_json(p));
  return a;
}

Json pixels_json(const std::vector<Vec2>& pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back(Json::array({p.x(), p.y()}));
  return a;
}

template <int D>
Eigen::Matrix<double, D, 1> json_vec(const Json& j, const std::string& source, std::size_t line) {
  if (!j.is_array() || j.size() != D) throw ParseError(source, line, "expected a " + std::to_string(D) + "-vector");
  Eigen::Matrix<double, D, 1> v;
  for (int i = 0; i < D; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw ParseError(source, line, "non-numeric coordinate");
    v(i) = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

template <int D>
std::vector<Eigen::Matrix<double, D, 1>> json_points(const Json& j, std::size_t expected, const std::string& what,
                                                     const std::string& source, std::size_t line) {
  if (!j.is_array() || j.size() != expected) {
    throw ParseError(source, line, what + ": expected " + std::to_string(expected) + " points");
  }
  std::vector<Eigen::Matrix<double, D, 1>> out;
  for (const auto& p : j) out.push_back(json_vec<D>(p, source, line));
  return out;
}

Json parse_json_line(std::string_view line, const std::string& source, std::size_t lineno) {
  try {
    return Json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
  }
}

const Json& field(const Json& j, const char* key, const std::string& source, std::size_t line) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(source, line, std::string("missing field '") + key + "'");
  return j.at(key);
}

double json_number(const Json& j, const char* key, const std::string& source, std::size_t line) {
  const Json& v = field(j, key, source, line);
  if (!v.is_number()) throw ParseError(source, line, std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

}  // namespace

// ---- demonstrations ----------------------------------------------------------------------

std::string demo_to_jsonl(const Demonstration& demo) {
  demo.validate();
  std::string out;
  Json header;
  header["schema"] = "ftf-demo";
  header["version"] = kDemoSchemaVersion;
  header["N"] = demo.num_robot_points();
  header["M"] = demo.num_object_points();
  header["fps"] = demo.fps;
  header["task"] = demo.task;
  header["seed"] = demo.seed;
  out += header.dump() + "\n";
  for (const auto& s : demo.steps) {
    Json j;
    j["t"] = s.timestamp;
    j["robot"] = points_json(s.robot_keypoints);
    j["object"] = points_json(s.object_keypoints);
    j["gripper"] = s.gripper_closed ? 1 : 0;
    j["force"] = s.force;
    out += j.dump() + "\n";
  }
  return out;
}

Demonstration demo_from_jsonl(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  Demonstration demo;
  std::size_t n = 0, m = 0;
  bool have_header = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const Json j = parse_json_line(line, source, lineno);
    if (!have_header) {
      if (!j.is_object() || j.value("schema", "") != "ftf-demo") {
        throw ParseError(source, lineno, "expected an ftf-demo header line");
      }
      if (j.value("version", -1) != kDemoSchemaVersion) {
        throw ParseError(source, lineno, "unsupported demo schema version");
      }
      n = static_cast<std::size_t>(json_number(j, "N", source, lineno));
      m = static_cast<std::size_t>(json_number(j, "M", source, lineno));
      demo.fps = json_number(j, "fps", source, lineno);
      demo.task = j.value("task", "");
      demo.seed = field(j, "seed", source, lineno).get<std::uint64_t>();
      have_header = true;
      continue;
    }
    DemoStep s;
    s.timestamp = json_number(j, "t", source, lineno);
    s.robot_keypoints = json_points<3>(field(j, "robot", source, lineno), n, "robot", source, lineno);
    s.object_keypoints = json_points<3>(field(j, "object", source, lineno), m, "object", source, lineno);
    const double g = json_number(j, "gripper", source, lineno);
    if (g != 0.0 && g != 1.0) throw ParseError(source, lineno, "gripper must be 0 or 1");
    s.gripper_closed = g == 1.0;
    s.force = json_number(j, "force", source, lineno);
    if (s.force < 0.0) throw ParseError(source, lineno, "force must be >= 0");
    demo.steps.push_back(std::move(s));
  }
  if (!have_header) throw ParseError(source, 0, "empty demo file");
  if (demo.steps.empty()) throw ParseError(source, 0, "demo file has no steps");
  demo.validate();
  return demo;
}

void save_demo(const fs::path& path, const Demonstration& demo) { write_file_atomic(path, demo_to_jsonl(demo)); }

Demonstration load_demo(const fs::path& path) { return demo_from_jsonl(read_file(path), path.string()); }

std::vector<Demonstration> load_demo_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Demonstration> demos;
  for (const auto& f : files) demos.push_back(load_demo(f));
  return demos;
}

// ---- camera rig ------------------------------------------------------------------------

NamedRig parse_rig(std::string_view text, const std::string& source) {
  struct Partial {
    std::string name;
    std::optional<Mat3> K;
    std::optional<Mat4> E;
    std::size_t line = 0;
  };
  std::vector<Partial> cams;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto tok = split_ws(strip_comment(lines[i]));
    if (tok.empty()) continue;
    const std::size_t lineno = i + 1;
    auto read_rows = [&](int rows) {
      Eigen::MatrixXd M(rows, rows);
      for (int r = 0; r < rows; ++r) {
        std::vector<std::string_view> row;
        while (row.empty()) {
          if (++i >= lines.size()) throw ParseError(source, lines.size(), "matrix truncated");
          row = split_ws(strip_comment(lines[i]));
        }
        if (row.size() != static_cast<std::size_t>(rows)) {
          throw ParseError(source, i + 1, "expected " + std::to_string(rows) + " numbers per row");
        }
        for (int c = 0; c < rows; ++c) M(r, c) = number(row[static_cast<std::size_t>(c)], source, i + 1);
      }
      return M;
    };
    if (tok[0] == "camera") {
      if (tok.size() != 2) throw ParseError(source, lineno, "expected 'camera <name>'");
      cams.push_back({std::string(tok[1]), std::nullopt, std::nullopt, lineno});
    } else if (tok[0] == "intrinsics" || tok[0] == "extrinsics") {
      if (cams.empty()) throw ParseError(source, lineno, "matrix before any 'camera' line");
      if (tok.size() != 1) throw ParseError(source, lineno, "matrix rows start on the next line");
      if (tok[0] == "intrinsics") {
        cams.back().K = Mat3(read_rows(3));
      } else {
        cams.back().E = Mat4(read_rows(4));
      }
    } else {
      throw ParseError(source, lineno, "unexpected '" + std::string(tok[0]) + "'");
    }
  }
  if (cams.size() != 2) throw ParseError(source, 0, "expected exactly two cameras, found " + std::to_string(cams.size()));
  auto build = [&](const Partial& p) {
    if (!p.K || !p.E) throw ParseError(source, p.line, "camera '" + p.name + "' lacks intrinsics or extrinsics");
    try {
      return CameraModel(*p.K, RigidTransform::from_matrix(*p.E));
    } catch (const DomainError& e) {
      throw ParseError(source, p.line, "camera '" + p.name + "': " + e.what());
    }
  };
  if (cams[0].name == cams[1].name) throw ParseError(source, cams[1].line, "duplicate camera name");
  return NamedRig{cams[0].name, cams[1].name, CameraRig{build(cams[0]), build(cams[1])}};
}

std::string format_rig(const NamedRig& rig) {
  std::string out;
  auto cam = [&out](const std::string& name, const CameraModel& c) {
    out += "camera " + name + "\nintrinsics\n";
    for (int r = 0; r < 3; ++r) out += fmt::format("{} {} {}\n", c.intrinsics()(r, 0), c.intrinsics()(r, 1), c.intrinsics()(r, 2));
    out += "extrinsics\n";
    const Mat4 E = c.extrinsics().matrix();
    for (int r = 0; r < 4; ++r) out += fmt::format("{} {} {} {}\n", E(r, 0), E(r, 1), E(r, 2), E(r, 3));
  };
  cam(rig.name_a, rig.rig.a);
  cam(rig.name_b, rig.rig.b);
  return out;
}

// ---- layout --------------------------------------------------------------------------

KeypointLayout parse_layout(std::string_view text, const std::string& source) {
  std::vector<std::string> names;
  std::vector<RigidTransform> offsets;
  std::optional<std::string> wrist;
  std::size_t wrist_line = 0;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto tok = split_ws(strip_comment(lines[i]));
    if (tok.empty()) continue;
    const std::size_t lineno = i + 1;
    if (tok[0] == "wrist" && tok.size() == 2) {
      wrist = std::string(tok[1]);
      wrist_line = lineno;
      continue;
    }
    if (tok.size() != 10) throw ParseError(source, lineno, "expected '<name> tx ty tz r1 r2 r3 r4 r5 r6'");
    Vec3 t;
    Rotation6D r;
    for (int k = 0; k < 3; ++k) t(k) = number(tok[static_cast<std::size_t>(1 + k)], source, lineno);
    for (int k = 0; k < 6; ++k) r.values(k) = number(tok[static_cast<std::size_t>(4 + k)], source, lineno);
    try {
      offsets.emplace_back(decode_rotation6d(r), t);
    } catch (const Error& e) {
      throw ParseError(source, lineno, std::string("bad rotation: ") + e.what());
    }
    names.emplace_back(tok[0]);
  }
  if (!wrist) throw ParseError(source, 0, "missing 'wrist <name>' line");
  const auto it = std::find(names.begin(), names.end(), *wrist);
  if (it == names.end()) throw ParseError(source, wrist_line, "wrist '" + *wrist + "' is not a keypoint");
  return KeypointLayout(std::move(names), std::move(offsets), static_cast<std::size_t>(it - names.begin()));
}

std::string format_layout(const KeypointLayout& layout) {
  std::string out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& o = layout.offsets()[i];
    const Rotation6D r = encode_rotation6d(o.rotation());
    out += fmt::format("{} {} {} {}", layout.names()[i], o.translation().x(), o.translation().y(), o.translation().z());
    for (int k = 0; k < 6; ++k) out += " " + num(r.values(k));
    out += "\n";
  }
  out += "wrist " + layout.names()[layout.wrist_index()] + "\n";
  return out;
}

// ---- calibration ------------------------------------------------------------------------

std::vector<std::pair<double, double>> parse_calibration_session(std::string_view text, const std::string& source) {
  constexpr std::size_t kColumns = 2 + 3 * kNumMagnetometers;
  std::vector<RawForceSample> samples;
  std::vector<double> newtons;
  bool first = true;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(strip_comment(lines[i]));
    if (line.empty()) continue;
    const std::size_t lineno = i + 1;
    const auto cols = split_char(line, ',');
    if (first && !try_number(cols[0])) {
      first = false;
      continue;  // header
    }
    first = false;
    if (cols.size() != kColumns) {
      throw ParseError(source, lineno, "expected " + std::to_string(kColumns) + " columns, got " + std::to_string(cols.size()));
    }
    RawForceSample s;
    s.timestamp = number(cols[0], source, lineno);
    for (std::size_t k = 0; k < kNumMagnetometers; ++k) {
      for (int a = 0; a < 3; ++a) s.magnetometers[k](a) = number(cols[1 + 3 * k + static_cast<std::size_t>(a)], source, lineno);
    }
    newtons.push_back(number(cols[kColumns - 1], source, lineno));
    if (!samples.empty() && !(s.timestamp > samples.back().timestamp)) {
      throw ParseError(source, lineno, "timestamps must strictly increase");
    }
    samples.push_back(s);
  }
  if (samples.empty()) throw ParseError(source, 0, "calibration session has no data rows");
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    RawForceSample s = samples[i];
    s.baseline = samples.front().magnetometers;
    pairs.emplace_back(aggregate_norm(s), newtons[i]);
  }
  return pairs;
}

std::string format_curve_csv(const CalibrationCurve& curve) {
  std::string out = "norm,newtons\n";
  for (const auto& k : curve.knots()) out += num(k.norm) + "," + num(k.newtons) + "\n";
  return out;
}

CalibrationCurve parse_curve_csv(std::string_view text, const std::string& source) {
  std::vector<CalibrationKnot> knots;
  bool first = true;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(strip_comment(lines[i]));
    if (line.empty()) continue;
    const auto cols = split_char(line, ',');
    if (first && !try_number(cols[0])) {
      first = false;
      continue;
    }
    first = false;
    if (cols.size() != 2) throw ParseError(source, i + 1, "expected 'norm,newtons'");
    knots.push_back({number(cols[0], source, i + 1), number(cols[1], source, i + 1)});
  }
  if (knots.empty()) throw ParseError(source, 0, "curve has no knots");
  try {
    return CalibrationCurve(std::move(knots));
  } catch (const ContractError& e) {
    throw ParseError(source, 0, e.what());
  }
}

// ---- key = value --------------------------------------------------------------------------

std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& source) {
  std::vector<KeyValue> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(strip_comment(lines[i]));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, i + 1, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(source, i + 1, "empty key");
    if (value.empty()) throw ParseError(source, i + 1, "empty value for '" + std::string(key) + "'");
    out.push_back({std::string(key), std::string(value), i + 1});
  }
  return out;
}

namespace {

using Setter = std::function<void(const KeyValue&)>;

void apply_keys(const std::vector<KeyValue>& kvs, const std::map<std::string, Setter>& setters,
                const std::string& source, std::initializer_list<std::string_view> skip = {}) {
  for (const auto& kv : kvs) {
    if (std::find(skip.begin(), skip.end(), kv.key) != skip.end()) continue;
    const auto it = setters.find(kv.key);
    if (it == setters.end()) {
      throw ConfigError(source + ":" + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
    }
    it->second(kv);
  }
}

Vec3 vec3_value(const KeyValue& kv, const std::string& source) {
  const auto tok = split_ws(kv.value);
  if (tok.size() != 3) throw ParseError(source, kv.line, "expected three numbers");
  return {number(tok[0], source, kv.line), number(tok[1], source, kv.line), number(tok[2], source, kv.line)};
}

}  // namespace

TaskSpec parse_task_spec(std::string_view text, const std::string& source) {
  const auto kvs = parse_key_values(text, source);
  TaskKind kind = TaskKind::fragile_pick_place;
  for (const auto& kv : kvs) {
    if (kv.key == "task") kind = parse_task_kind(kv.value);
  }
  TaskSpec spec = default_task(kind);
  bool keypoints_reset = false;
  auto d = [&](double& target) { return [&target, &source](const KeyValue& kv) { target = number(kv.value, source, kv.line); }; };
  std::map<std::string, Setter> setters{
      {"stiffness", d(spec.stiffness)},
      {"crush_force", d(spec.crush_force)},
      {"slip_force", d(spec.slip_force)},
      {"contact_closure_min", d(spec.contact_closure_min)},
      {"contact_closure_max", d(spec.contact_closure_max)},
      {"deformable", [&](const KeyValue& kv) { spec.deformable = boolean(kv.value, source, kv.line); }},
      {"rest_height", d(spec.rest_height)},
      {"start_height", d(spec.start_height)},
      {"placement_x_min", d(spec.placement_x.x())},
      {"placement_x_max", d(spec.placement_x.y())},
      {"placement_y_min", d(spec.placement_y.x())},
      {"placement_y_max", d(spec.placement_y.y())},
      {"goal_x", d(spec.goal.x())},
      {"goal_y", d(spec.goal.y())},
      {"goal_tolerance", d(spec.goal_tolerance)},
      {"transport_height", d(spec.transport_height)},
      {"twist_angle", d(spec.twist_angle)},
      {"target_force_fraction", d(spec.target_force_fraction)},
      {"fps", d(spec.fps)},
      {"reset_position",
       [&](const KeyValue& kv) {
         spec.reset_pose = RigidTransform(spec.reset_pose.rotation(), vec3_value(kv, source));
       }},
      {"object_keypoint",
       [&](const KeyValue& kv) {
         if (!keypoints_reset) spec.object_keypoints.clear();
         keypoints_reset = true;
         spec.object_keypoints.push_back(vec3_value(kv, source));
       }},
      {"max_closure_rate", d(spec.plant.max_closure_rate)},
      {"sensor_noise_sigma", d(spec.plant.sensor_noise_sigma)},
      {"tracker_noise_sigma", d(spec.plant.tracker_noise_sigma)},
      {"capture_radius", d(spec.plant.capture_radius)},
      {"capture_height", d(spec.plant.capture_height)},
      {"drop_height", d(spec.plant.drop_height)},
  };
  apply_keys(kvs, setters, source, {"task"});
  spec.validate();
  return spec;
}

std::string format_task_spec(const TaskSpec& spec) {
  std::string out;
  auto kv = [&out](std::string_view k, const std::string& v) { out += fmt::format("{} = {}\n", k, v); };
  kv("task", std::string(to_string(spec.kind)));
  kv("stiffness", num(spec.stiffness));
  kv("crush_force", num(spec.crush_force));
  kv("slip_force", num(spec.slip_force));
  kv("contact_closure_min", num(spec.contact_closure_min));
  kv("contact_closure_max", num(spec.contact_closure_max));
  kv("deformable", spec.deformable ? "true" : "false");
  kv("rest_height", num(spec.rest_height));
  kv("start_height", num(spec.start_height));
  kv("placement_x_min", num(spec.placement_x.x()));
  kv("placement_x_max", num(spec.placement_x.y()));
  kv("placement_y_min", num(spec.placement_y.x()));
  kv("placement_y_max", num(spec.placement_y.y()));
  kv("goal_x", num(spec.goal.x()));
  kv("goal_y", num(spec.goal.y()));
  kv("goal_tolerance", num(spec.goal_tolerance));
  kv("transport_height", num(spec.transport_height));
  kv("twist_angle", num(spec.twist_angle));
  kv("target_force_fraction", num(spec.target_force_fraction));
  kv("fps", num(spec.fps));
  const Vec3 r = spec.reset_pose.translation();
  kv("reset_position", fmt::format("{} {} {}", r.x(), r.y(), r.z()));
  for (const auto& p : spec.object_keypoints) kv("object_keypoint", fmt::format("{} {} {}", p.x(), p.y(), p.z()));
  kv("max_closure_rate", num(spec.plant.max_closure_rate));
  kv("sensor_noise_sigma", num(spec.plant.sensor_noise_sigma));
  kv("tracker_noise_sigma", num(spec.plant.tracker_noise_sigma));
  kv("capture_radius", num(spec.plant.capture_radius));
  kv("capture_height", num(spec.plant.capture_height));
  kv("drop_height", num(spec.plant.drop_height));
  return out;
}

TaskSpec resolve_task(const std::string& name_or_path) {
  for (auto kind : {TaskKind::fragile_pick_place, TaskKind::unstack, TaskKind::twist_lift}) {
    if (to_string(kind) == name_or_path) return default_task(kind);
  }
  if (!fs::exists(name_or_path)) {
    throw ConfigError("'" + name_or_path + "' is neither a built-in task nor an existing task file");
  }
  return parse_task_spec(read_file(name_or_path), name_or_path);
}

RunConfig parse_run_config(std::string_view text, const std::string& source, const fs::path& base) {
  const auto kvs = parse_key_values(text, source);
  RunConfig rc;
  bool have_seed = false;
  auto existing = [&](const KeyValue& kv) {
    fs::path p(kv.value);
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p)) throw ConfigError(source + ":" + std::to_string(kv.line) + ": no such file: " + p.string());
    return p;
  };
  auto d = [&](double& t) { return [&t, &source](const KeyValue& kv) { t = number(kv.value, source, kv.line); }; };
  auto z = [&](std::size_t& t) {
    return [&t, &source](const KeyValue& kv) { t = static_cast<std::size_t>(unsigned_number(kv.value, source, kv.line)); };
  };
  std::map<std::string, Setter> setters{
      {"seed",
       [&](const KeyValue& kv) {
         rc.seed = unsigned_number(kv.value, source, kv.line);
         have_seed = true;
       }},
      {"task",
       [&](const KeyValue& kv) {
         try {
           parse_task_kind(kv.value);
           rc.task = kv.value;
         } catch (const ConfigError&) {
           rc.task_path = existing(kv);
         }
       }},
      {"rig", [&](const KeyValue& kv) { rc.rig_path = existing(kv); }},
      {"layout", [&](const KeyValue& kv) { rc.layout_path = existing(kv); }},
      {"out",
       [&](const KeyValue& kv) {
         fs::path p(kv.value);
         rc.out = p.is_relative() ? base / p : p;
       }},
      {"demos", z(rc.demos)},
      {"episodes", z(rc.episodes)},
      {"policy.history", z(rc.policy.history)},
      {"policy.horizon", z(rc.policy.horizon)},
      {"policy.width", z(rc.policy.width)},
      {"policy.depth", z(rc.policy.depth)},
      {"policy.heads", z(rc.policy.heads)},
      {"policy.ffn_width", z(rc.policy.ffn_width)},
      {"policy.stride", z(rc.policy.stride)},
      {"policy.mask_force", [&](const KeyValue& kv) { rc.policy.mask_force = boolean(kv.value, source, kv.line); }},
      {"train.epochs", z(rc.train.epochs)},
      {"train.batch_size", z(rc.train.batch_size)},
      {"train.max_steps", z(rc.train.max_steps)},
      {"train.learning_rate", d(rc.train.learning_rate)},
      {"train.momentum", d(rc.train.momentum)},
      {"train.cosine_decay", [&](const KeyValue& kv) { rc.train.cosine_decay = boolean(kv.value, source, kv.line); }},
      {"train.optimizer",
       [&](const KeyValue& kv) {
         if (kv.value == "adam") {
           rc.train.optimizer = Optimizer::adam;
         } else if (kv.value == "sgd_momentum") {
           rc.train.optimizer = Optimizer::sgd_momentum;
         } else {
           throw ConfigError(source + ":" + std::to_string(kv.line) + ": optimizer must be adam or sgd_momentum");
         }
       }},
      {"controller.k", d(rc.controller.k)},
      {"controller.epsilon", d(rc.controller.epsilon)},
      {"controller.derivative_gain", d(rc.controller.derivative_gain)},
      {"controller.max_inner_iters", z(rc.controller.max_inner_iters)},
      {"rollout.close_threshold", d(rc.rollout.close_threshold)},
      {"rollout.open_threshold", d(rc.rollout.open_threshold)},
      {"rollout.control_rate", d(rc.rollout.control_rate)},
      {"rollout.max_steps", z(rc.rollout.max_steps)},
      {"rollout.decay", d(rc.rollout.decay)},
      {"rollout.gripper_mode",
       [&](const KeyValue& kv) {
         if (kv.value == "force_feedback") {
           rc.rollout.gripper_mode = GripperMode::force_feedback;
         } else if (kv.value == "binary") {
           rc.rollout.gripper_mode = GripperMode::binary;
         } else {
           throw ConfigError(source + ":" + std::to_string(kv.line) + ": gripper_mode must be force_feedback or binary");
         }
       }},
  };
  apply_keys(kvs, setters, source);
  if (!have_seed) throw ConfigError(source + ": 'seed' is mandatory");
  try {
    rc.policy.validate();
    rc.controller.validate();
    rc.rollout.validate();
  } catch (const ContractError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return rc;
}

// ---- hand tracks ----------------------------------------------------------------------

HandTrack hand_track_from_jsonl(std::string_view text, const std::string& source) {
  HandTrack track;
  bool have_header = false;
  std::optional<std::size_t> m;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const Json j = parse_json_line(line, source, lineno);
    if (!have_header) {
      if (!j.is_object() || j.value("schema", "") != "ftf-hand") {
        throw ParseError(source, lineno, "expected an ftf-hand header line");
      }
      if (j.value("version", -1) != 1) throw ParseError(source, lineno, "unsupported hand schema version");
      const std::string mode = j.value("mode", "");
      if (mode != "3d" && mode != "pixels") throw ParseError(source, lineno, "mode must be '3d' or 'pixels'");
      track.pixels = mode == "pixels";
      if (j.contains("cameras")) {
        const auto& c = j.at("cameras");
        if (!c.is_array() || c.size() != 2 || !c[0].is_string() || !c[1].is_string()) {
          throw ParseError(source, lineno, "cameras must be two names");
        }
        track.camera_a = c[0].get<std::string>();
        track.camera_b = c[1].get<std::string>();
      }
      track.task = j.value("task", "");
      have_header = true;
      continue;
    }
    HandTrackStep s;
    s.timestamp = json_number(j, "t", source, lineno);
    s.force = json_number(j, "force", source, lineno);
    if (s.force < 0.0) throw ParseError(source, lineno, "force must be >= 0");
    if (track.pixels) {
      const Json& px = field(j, "hand_px", source, lineno);
      s.hand_px_a = json_points<2>(field(px, track.camera_a.c_str(), source, lineno), hand::kNumKeypoints, "hand_px", source, lineno);
      s.hand_px_b = json_points<2>(field(px, track.camera_b.c_str(), source, lineno), hand::kNumKeypoints, "hand_px", source, lineno);
      if (j.contains("object_px")) {
        const Json& opx = j.at("object_px");
        const Json& oa = field(opx, track.camera_a.c_str(), source, lineno);
        if (!oa.is_array()) throw ParseError(source, lineno, "object_px must hold point lists");
        s.object_px_a = json_points<2>(oa, oa.size(), "object_px", source, lineno);
        s.object_px_b = json_points<2>(field(opx, track.camera_b.c_str(), source, lineno), oa.size(), "object_px", source, lineno);
      }
    } else {
      HandFrame f;
      f.timestamp = s.timestamp;
      const auto pts = json_points<3>(field(j, "hand", source, lineno), hand::kNumKeypoints, "hand", source, lineno);
      std::copy(pts.begin(), pts.end(), f.keypoints.begin());
      s.hand = f;
      if (j.contains("object")) {
        const Json& o = j.at("object");
        if (!o.is_array()) throw ParseError(source, lineno, "object must be a point list");
        s.object = json_points<3>(o, o.size(), "object", source, lineno);
      }
    }
    const std::size_t count = track.pixels ? s.object_px_a.size() : s.object.size();
    if (!m) m = count;
    if (*m != count) throw ParseError(source, lineno, "object keypoint count changes between frames");
    if (!track.steps.empty() && !(s.timestamp > track.steps.back().timestamp)) {
      throw ParseError(source, lineno, "timestamps must strictly increase");
    }
    track.steps.push_back(std::move(s));
  }
  if (!have_header) throw ParseError(source, 0, "empty hand track file");
  if (track.steps.empty()) throw ParseError(source, 0, "hand track has no frames");
  return track;
}

std::string hand_track_to_jsonl(const HandTrack& track) {
  std::string out;
  Json header;
  header["schema"] = "ftf-hand";
  header["version"] = 1;
  header["mode"] = track.pixels ? "pixels" : "3d";
  header["cameras"] = Json::array({track.camera_a, track.camera_b});
  header["task"] = track.task;
  out += header.dump() + "\n";
  for (const auto& s : track.steps) {
    Json j;
    j["t"] = s.timestamp;
    if (track.pixels) {
      if (!s.hand_px_a || !s.hand_px_b) throw ContractError("hand track: pixel frame lacks hand pixels");
      Json px;
      px[track.camera_a] = pixels_json(*s.hand_px_a);
      px[track.camera_b] = pixels_json(*s.hand_px_b);
      j["hand_px"] = px;
      Json opx;
      opx[track.camera_a] = pixels_json(s.object_px_a);
      opx[track.camera_b] = pixels_json(s.object_px_b);
      j["object_px"] = opx;
    } else {
      if (!s.hand) throw ContractError("hand track: 3d frame lacks hand keypoints");
      j["hand"] = points_json(std::vector<Vec3>(s.hand->keypoints.begin(), s.hand->keypoints.end()));
      j["object"] = points_json(s.object);
    }
    j["force"] = s.force;
    out += j.dump() + "\n";
  }
  return out;
}

// ---- models ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kModelMagic = "FTFMODEL";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw ParseError(source_, 0, "model file truncated");
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t u64() { return le(take(8)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(take(4))); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  static std::uint64_t le(std::string_view b) {
    std::uint64_t v = 0;
    for (std::size_t i = b.size(); i-- > 0;) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }
  std::string_view bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

Json config_json(const PolicyConfig& c) {
  Json j;
  j["num_robot_points"] = c.num_robot_points;
  j["num_object_points"] = c.num_object_points;
  j["history"] = c.history;
  j["horizon"] = c.horizon;
  j["width"] = c.width;
  j["depth"] = c.depth;
  j["heads"] = c.heads;
  j["ffn_width"] = c.ffn_width;
  j["stride"] = c.stride;
  j["mask_force"] = c.mask_force;
  return j;
}

}  // namespace

std::string serialize_model(const PolicyNet& net) {
  Json header;
  header["config"] = config_json(net.config());
  const Normalization& n = net.normalization();
  header["normalization"] = {{"position_mean", vec_json(n.position_mean)},
                             {"position_scale", vec_json(n.position_scale)},
                             {"force_scale", n.force_scale}};
  Json tensors = Json::array();
  for (const auto& t : net.tensors()) {
    tensors.push_back({{"name", t.name}, {"offset", t.offset}, {"rows", t.rows}, {"cols", t.cols}});
  }
  header["tensors"] = tensors;
  const std::string h = header.dump();
  std::string out(kModelMagic);
  put_u32(out, kModelVersion);
  put_u64(out, h.size());
  out += h;
  const auto params = net.parameters();
  put_u64(out, params.size());
  for (double v : params) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

PolicyNet deserialize_model(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.take(kModelMagic.size()) != kModelMagic) throw ParseError(source, 0, "not a model file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) throw ParseError(source, 0, "unsupported model version " + std::to_string(version));
  const auto header_len = r.u64();
  Json h;
  try {
    h = Json::parse(r.take(static_cast<std::size_t>(header_len)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, 0, std::string("bad model header: ") + e.what());
  }
  PolicyConfig c;
  try {
    const Json& j = h.at("config");
    c.num_robot_points = j.at("num_robot_points").get<std::size_t>();
    c.num_object_points = j.at("num_object_points").get<std::size_t>();
    c.history = j.at("history").get<std::size_t>();
    c.horizon = j.at("horizon").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ffn_width = j.at("ffn_width").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.mask_force = j.at("mask_force").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, 0, std::string("bad model config: ") + e.what());
  }
  PolicyNet net(c);
  Normalization norm;
  try {
    const Json& n = h.at("normalization");
    norm.position_mean = json_vec<3>(n.at("position_mean"), source, 0);
    norm.position_scale = json_vec<3>(n.at("position_scale"), source, 0);
    norm.force_scale = n.at("force_scale").get<double>();
    const Json& tensors = h.at("tensors");
    if (tensors.size() != net.tensors().size()) throw ParseError(source, 0, "tensor table does not match config");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& t = net.tensors()[i];
      if (tensors[i].at("name").get<std::string>() != t.name || tensors[i].at("offset").get<std::size_t>() != t.offset ||
          tensors[i].at("rows").get<std::size_t>() != t.rows || tensors[i].at("cols").get<std::size_t>() != t.cols) {
        throw ParseError(source, 0, "tensor '" + t.name + "' does not match config");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, 0, std::string("bad model header: ") + e.what());
  }
  net.set_normalization(norm);
  const auto count = r.u64();
  auto params = net.parameters();
  if (count != params.size()) throw ParseError(source, 0, "parameter count does not match config");
  for (auto& p : params) p = std::bit_cast<double>(r.u64());
  if (!r.done()) throw ParseError(source, 0, "trailing bytes after parameters");
  return net;
}

void save_model(const fs::path& path, const PolicyNet& net) { write_file_atomic(path, serialize_model(net)); }

PolicyNet load_model(const fs::path& path) { return deserialize_model(read_file(path), path.string()); }

// ---- episodes and reports ----------------------------------------------------------------

namespace {

Json run_config_json(const TaskSpec& spec, const ControllerConfig& cc, const RolloutConfig& rc) {
  Json j;
  j["task"] = std::string(to_string(spec.kind));
  j["controller"] = {{"k", cc.k},
                     {"epsilon", cc.epsilon},
                     {"derivative_gain", cc.derivative_gain},
                     {"max_inner_iters", cc.max_inner_iters}};
  j["rollout"] = {{"close_threshold", rc.close_threshold},
                  {"open_threshold", rc.open_threshold},
                  {"control_rate", rc.control_rate},
                  {"max_steps", rc.max_steps},
                  {"decay", rc.decay},
                  {"gripper_mode", rc.gripper_mode == GripperMode::binary ? "binary" : "force_feedback"}};
  return j;
}

}  // namespace

std::string episode_to_json(const EpisodeRecord& rec, const TaskSpec& spec, const ControllerConfig& cc,
                            const RolloutConfig& rc) {
  Json j;
  j["schema"] = "ftf-episode";
  j["version"] = 1;
  j["seed"] = rec.seed;
  j["config"] = run_config_json(spec, cc, rc);
  j["success"] = rec.success;
  j["reason"] = rec.reason;
  j["crush_events"] = rec.crush_events;
  j["drop_events"] = rec.drop_events;
  j["peak_force"] = rec.peak_force;
  j["nonconverged"] = rec.nonconverged;
  Json steps = Json::array();
  for (const auto& s : rec.steps) {
    Json js;
    js["step"] = s.step;
    js["eef_position"] = vec_json(s.eef_position);
    js["eef_orientation_6d"] = Json::array();
    for (int k = 0; k < 6; ++k) js["eef_orientation_6d"].push_back(s.eef_orientation.values(k));
    js["gripper_logit"] = s.gripper_logit;
    js["force_target"] = s.force_target;
    js["force_clamped"] = s.force_clamped;
    js["closure"] = s.closure;
    js["contact_force"] = s.force_reading;
    js["status"] = s.status;
    if (s.trace) {
      Json iters = Json::array();
      for (const auto& it : s.trace->steps) iters.push_back(Json::array({it.target, it.force, it.delta, it.closure}));
      js["controller"] = {{"termination", std::string(to_string(s.trace->termination))},
                          {"final_force", s.trace->final_force},
                          {"iterations", iters}};
    } else {
      js["controller"] = nullptr;
    }
    steps.push_back(js);
  }
  j["steps"] = steps;
  return j.dump(1) + "\n";
}

std::string report_to_json(const EvalReport& report, const TaskSpec& spec, const ControllerConfig& cc,
                           const RolloutConfig& rc) {
  Json j;
  j["schema"] = "ftf-eval-report";
  j["version"] = 1;
  j["config"] = run_config_json(spec, cc, rc);
  j["episodes"] = report.episodes;
  j["successes"] = report.successes;
  j["success_rate"] = report.success_rate;
  j["mean_peak_force"] = report.mean_peak_force;
  j["crush_episodes"] = report.crush_episodes;
  j["drop_episodes"] = report.drop_episodes;
  Json eps = Json::array();
  for (const auto& r : report.records) {
    eps.push_back({{"seed", r.seed},
                   {"success", r.success},
                   {"reason", r.reason},
                   {"crush_events", r.crush_events},
                   {"drop_events", r.drop_events},
                   {"peak_force", r.peak_force},
                   {"nonconverged", r.nonconverged}});
  }
  j["per_episode"] = eps;
  return j.dump(1) + "\n";
}

}  // namespace ftf
