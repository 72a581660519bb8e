#pragma once

// On-disk formats. Text readers report malformed input as ParseError with a
// 1-based line number; missing files raise ConfigError. Writers go through
// write_file_atomic (temp file + rename).

#include "ftf/control.hpp"
#include "ftf/demonstration.hpp"
#include "ftf/geometry.hpp"
#include "ftf/plant.hpp"
#include "ftf/policy.hpp"
#include "ftf/retarget.hpp"
#include "ftf/tactile.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ftf {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view content);
std::string read_file(const fs::path& path);

// ---- demonstrations (JSON lines) -------------------------------------------

inline constexpr int kDemoSchemaVersion = 1;

/// Header line {"schema":"ftf-demo","version","N","M","fps","task","seed"}
/// followed by one {"t","robot","object","gripper","force"} line per step.
std::string demo_to_jsonl(const Demonstration& demo);
Demonstration demo_from_jsonl(std::string_view text, const std::string& source = "<demo>");
void save_demo(const fs::path& path, const Demonstration& demo);
Demonstration load_demo(const fs::path& path);
/// All *.jsonl files of a directory, sorted by name.
std::vector<Demonstration> load_demo_dir(const fs::path& dir);

// ---- camera rig --------------------------------------------------------------

/// Blocks of
///   camera <name>
///   intrinsics  (3 rows of 3 numbers)
///   extrinsics  (4 rows of 4 numbers, world -> camera)
/// '#' starts a comment. Exactly two cameras.
struct NamedRig {
  std::string name_a = "a";
  std::string name_b = "b";
  CameraRig rig;
};

NamedRig parse_rig(std::string_view text, const std::string& source = "<rig>");
std::string format_rig(const NamedRig& rig);

// ---- keypoint layout -----------------------------------------------------------

/// One line per keypoint: `<name> tx ty tz r1 .. r6` (translation plus 6D
/// rotation), and one `wrist <name>` line.
KeypointLayout parse_layout(std::string_view text, const std::string& source = "<layout>");
std::string format_layout(const KeypointLayout& layout);

// ---- calibration -------------------------------------------------------------

/// CSV rows `t, m0x, m0y, m0z, ..., m4z, newtons` (17 columns, optional
/// header). The first row is the at-rest baseline; every row yields the pair
/// (aggregate_norm against that baseline, newtons).
std::vector<std::pair<double, double>> parse_calibration_session(std::string_view text,
                                                                 const std::string& source = "<session>");
std::string format_curve_csv(const CalibrationCurve& curve);
CalibrationCurve parse_curve_csv(std::string_view text, const std::string& source = "<curve>");

// ---- key = value documents -------------------------------------------------------

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; blank lines and '#' comments are skipped.
std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& source);

/// Starts from default_task(task) and applies overrides. `object_keypoint`
/// may repeat ("x y z"); the first occurrence replaces the default list.
TaskSpec parse_task_spec(std::string_view text, const std::string& source = "<task>");
std::string format_task_spec(const TaskSpec& spec);

/// Built-in task name or path to a task spec file.
TaskSpec resolve_task(const std::string& name_or_path);

struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<fs::path> task_path;
  std::string task = "fragile_pick_place";
  std::optional<fs::path> rig_path;
  std::optional<fs::path> layout_path;
  std::optional<fs::path> out;
  std::size_t demos = 30;
  std::size_t episodes = 10;
  PolicyConfig policy;
  TrainConfig train;
  ControllerConfig controller;
  RolloutConfig rollout;
};

/// Throws ConfigError when the seed is missing, a key is unknown or a
/// referenced path does not exist. Relative paths resolve against `base`.
RunConfig parse_run_config(std::string_view text, const std::string& source, const fs::path& base);

// ---- hand tracks -------------------------------------------------------------------

struct HandTrackStep {
  double timestamp = 0.0;
  std::optional<HandFrame> hand;                  // 3d mode
  std::optional<std::vector<Vec2>> hand_px_a, hand_px_b;  // pixel mode, 21 each
  std::vector<Vec3> object;
  std::vector<Vec2> object_px_a, object_px_b;
  double force = 0.0;
};

struct HandTrack {
  bool pixels = false;
  std::string camera_a = "a";
  std::string camera_b = "b";
  std::string task;
  std::vector<HandTrackStep> steps;
};

/// Header {"schema":"ftf-hand","version":1,"mode":"3d"|"pixels",
/// "cameras":["a","b"],"task"} then one line per frame with "t", "hand"
/// (21x3) or "hand_px" {"a":21x2,"b":21x2}, "object" or "object_px", "force".
HandTrack hand_track_from_jsonl(std::string_view text, const std::string& source = "<hand>");
std::string hand_track_to_jsonl(const HandTrack& track);

// ---- models --------------------------------------------------------------------------

inline constexpr std::uint32_t kModelVersion = 1;

/// "FTFMODEL", u32 version, u64 header length, JSON header (config,
/// normalization, tensor table), u64 parameter count, f64 parameters; all
/// integers and floats little-endian.
std::string serialize_model(const PolicyNet& net);
PolicyNet deserialize_model(std::string_view bytes, const std::string& source = "<model>");
void save_model(const fs::path& path, const PolicyNet& net);
PolicyNet load_model(const fs::path& path);

// ---- episode records and reports ------------------------------------------------------

std::string episode_to_json(const EpisodeRecord& rec, const TaskSpec& spec, const ControllerConfig& cc,
                            const RolloutConfig& rc);
std::string report_to_json(const EvalReport& report, const TaskSpec& spec, const ControllerConfig& cc,
                           const RolloutConfig& rc);

}  // namespace ftf
