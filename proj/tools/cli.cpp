#include "ftf/cli.hpp"

#include "ftf/control.hpp"
#include "ftf/errors.hpp"
#include "ftf/formats.hpp"
#include "ftf/plant.hpp"
#include "ftf/policy.hpp"
#include "ftf/retarget.hpp"
#include "ftf/tactile.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

namespace ftf {

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string task;
  std::optional<std::size_t> episodes;
  std::string rig;
  std::string layout;
  std::string session;
  std::string hand;
  std::string demos;
  std::string model;
  std::string seeds;
  std::string source = "policy";
  std::optional<std::size_t> count;
  bool write_hand = false;
  bool pixels = false;
  bool binary = false;
  bool mask_force = false;
  bool untrained = false;
};

void setup_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_color_mt("ftf");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("FTF_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

/// Run config from --config (if any) with command-line overrides applied.
RunConfig resolve_config(const Options& o, bool need_seed) {
  RunConfig rc;
  bool have_seed = false;
  if (!o.config.empty()) {
    const fs::path path(o.config);
    rc = parse_run_config(read_file(path), path.string(), path.parent_path());
    have_seed = true;
  }
  if (o.seed) {
    rc.seed = *o.seed;
    have_seed = true;
  }
  if (need_seed && !have_seed) throw ConfigError("a seed is mandatory (--seed or 'seed' in --config)");
  if (!o.task.empty()) {
    rc.task = o.task;
    rc.task_path.reset();
  }
  if (o.episodes) rc.episodes = *o.episodes;
  if (o.count) rc.demos = *o.count;
  if (!o.out.empty()) rc.out = fs::path(o.out);
  if (!o.rig.empty()) rc.rig_path = fs::path(o.rig);
  if (!o.layout.empty()) rc.layout_path = fs::path(o.layout);
  if (o.mask_force) rc.policy.mask_force = true;
  if (o.binary) rc.rollout.gripper_mode = GripperMode::binary;
  return rc;
}

TaskSpec task_of(const RunConfig& rc) {
  return rc.task_path ? resolve_task(rc.task_path->string()) : resolve_task(rc.task);
}

KeypointLayout layout_of(const RunConfig& rc) {
  if (!rc.layout_path) return KeypointLayout::default_layout();
  return parse_layout(read_file(*rc.layout_path), rc.layout_path->string());
}

fs::path out_dir(const RunConfig& rc) {
  if (!rc.out) throw ConfigError("an output directory is required (--out)");
  return *rc.out;
}

std::string json_line(const nlohmann::ordered_json& j) { return j.dump(1) + "\n"; }

// ---- verbs -----------------------------------------------------------------------

int cmd_calibrate(const Options& o) {
  const RunConfig rc = resolve_config(o, false);
  const fs::path dir = out_dir(rc);
  const auto pairs = parse_calibration_session(read_file(o.session), o.session);
  const CalibrationFit fit = fit_calibration(pairs);
  write_file_atomic(dir / "curve.csv", format_curve_csv(fit.curve));
  nlohmann::ordered_json report;
  report["schema"] = "ftf-calibration-report";
  report["version"] = 1;
  report["samples"] = pairs.size();
  report["knots"] = fit.curve.knots().size();
  report["max_residual"] = fit.max_residual;
  report["pooled_count"] = fit.pooled_count;
  write_file_atomic(dir / "calibration_report.json", json_line(report));
  spdlog::info("calibrate: {} knots, max residual {:.3g} N, {} pooled", fit.curve.knots().size(), fit.max_residual,
               fit.pooled_count);
  return kExitOk;
}

HandTrack hand_track_of(const Demonstration& demo, const TaskSpec& spec, const KeypointLayout& layout,
                        const std::optional<CameraRig>& rig) {
  constexpr double kClosedAperture = 0.04;
  constexpr double kOpenAperture = 0.10;
  HandTrack track;
  track.pixels = rig.has_value();
  track.task = demo.task;
  const Mat3 R0 = spec.reset_pose.rotation();
  for (const auto& s : demo.steps) {
    const RigidTransform pose = keypoints_to_pose(s.robot_keypoints, layout, R0);
    const HandFrame frame =
        synthesize_hand_frame(pose, s.gripper_closed ? kClosedAperture : kOpenAperture, s.timestamp);
    HandTrackStep hs;
    hs.timestamp = s.timestamp;
    hs.force = s.force;
    if (rig) {
      std::vector<Vec2> a, b;
      for (const auto& p : frame.keypoints) {
        a.push_back(project(rig->a, p));
        b.push_back(project(rig->b, p));
      }
      hs.hand_px_a = a;
      hs.hand_px_b = b;
      for (const auto& p : s.object_keypoints) {
        hs.object_px_a.push_back(project(rig->a, p));
        hs.object_px_b.push_back(project(rig->b, p));
      }
    } else {
      hs.hand = frame;
      hs.object = s.object_keypoints;
    }
    track.steps.push_back(std::move(hs));
  }
  return track;
}

int cmd_gen_demos(const Options& o) {
  const RunConfig rc = resolve_config(o, true);
  const fs::path dir = out_dir(rc);
  const TaskSpec spec = task_of(rc);
  spec.validate();
  const KeypointLayout layout = layout_of(rc);
  if (rc.demos == 0) spdlog::warn("gen-demos: count is 0, nothing to generate");
  fs::create_directories(dir);
  std::optional<CameraRig> rig;
  if (o.pixels) {
    NamedRig named{"a", "b", default_rig()};
    if (rc.rig_path) named = parse_rig(read_file(*rc.rig_path), rc.rig_path->string());
    rig = named.rig;
    write_file_atomic(dir / "rig.txt", format_rig(named));
  }
  std::size_t failures = 0;
  for (std::size_t i = 0; i < rc.demos; ++i) {
    const std::uint64_t seed = derive_seed(rc.seed, "demo", i);
    const ObjectModel object = sample_object(spec, seed);
    const ExpertResult r = scripted_expert(spec, object, layout, seed);
    if (!r.outcome.success) {
      ++failures;
      spdlog::warn("gen-demos: demo {} did not succeed ({})", i, r.outcome.reason);
    }
    save_demo(dir / fmt::format("demo_{:04d}.jsonl", i), r.demo);
    if (o.write_hand) {
      write_file_atomic(dir / fmt::format("hand_{:04d}.hand", i), hand_track_to_jsonl(hand_track_of(r.demo, spec, layout, rig)));
    }
  }
  spdlog::info("gen-demos: wrote {} demos to {} ({} unsuccessful)", rc.demos, dir.string(), failures);
  return kExitOk;
}

int cmd_retarget(const Options& o) {
  const RunConfig rc = resolve_config(o, false);
  const fs::path dir = out_dir(rc);
  const TaskSpec spec = task_of(rc);
  const KeypointLayout layout = layout_of(rc);
  const HandTrack track = hand_track_from_jsonl(read_file(o.hand), o.hand);
  std::vector<HandFrame> frames;
  std::vector<double> forces;
  std::vector<std::vector<Vec3>> objects;
  if (track.pixels) {
    if (!rc.rig_path) throw ConfigError("retarget: pixel tracks need a camera rig (--rig)");
    const NamedRig rig = parse_rig(read_file(*rc.rig_path), rc.rig_path->string());
    if (rig.name_a != track.camera_a || rig.name_b != track.camera_b) {
      throw ContractError("retarget: track cameras (" + track.camera_a + ", " + track.camera_b +
                          ") do not match rig cameras (" + rig.name_a + ", " + rig.name_b + ")");
    }
    for (const auto& s : track.steps) {
      HandFrame f;
      f.timestamp = s.timestamp;
      for (std::size_t k = 0; k < hand::kNumKeypoints; ++k) {
        f.keypoints[k] = triangulate(rig.rig.a, (*s.hand_px_a)[k], rig.rig.b, (*s.hand_px_b)[k]);
      }
      std::vector<Vec3> obj;
      for (std::size_t k = 0; k < s.object_px_a.size(); ++k) {
        obj.push_back(triangulate(rig.rig.a, s.object_px_a[k], rig.rig.b, s.object_px_b[k]));
      }
      frames.push_back(f);
      objects.push_back(std::move(obj));
      forces.push_back(s.force);
    }
  } else {
    for (const auto& s : track.steps) {
      frames.push_back(*s.hand);
      objects.push_back(s.object);
      forces.push_back(s.force);
    }
  }
  const auto states = retarget_trajectory(frames, forces, spec.reset_pose, layout);
  Demonstration demo;
  demo.task = track.task.empty() ? std::string(to_string(spec.kind)) : track.task;
  demo.seed = rc.seed;
  demo.fps = frames.size() > 1
                 ? static_cast<double>(frames.size() - 1) / (frames.back().timestamp - frames.front().timestamp)
                 : spec.fps;
  for (std::size_t t = 0; t < states.size(); ++t) {
    demo.steps.push_back({frames[t].timestamp, states[t].keypoints, objects[t], states[t].gripper_closed, states[t].force});
  }
  save_demo(dir / "demo.jsonl", demo);
  spdlog::info("retarget: {} frames -> {}", demo.steps.size(), (dir / "demo.jsonl").string());
  return kExitOk;
}

int cmd_train(const Options& o) {
  RunConfig rc = resolve_config(o, true);
  const fs::path dir = out_dir(rc);
  if (o.demos.empty()) throw ConfigError("train: --demos directory is required");
  const auto demos = load_demo_dir(o.demos);
  if (demos.empty()) throw ContractError("train: no demonstrations in " + o.demos);
  rc.policy.num_robot_points = demos.front().num_robot_points();
  rc.policy.num_object_points = demos.front().num_object_points();
  PolicyNet net(rc.policy);
  TrainConfig tc = rc.train;
  tc.seed = derive_seed(rc.seed, "train");
  const TrainResult result = train(net, demos, tc);
  save_model(dir / "model.ftfm", net);
  nlohmann::ordered_json report;
  report["schema"] = "ftf-train-report";
  report["version"] = 1;
  report["demos"] = demos.size();
  report["steps"] = result.steps;
  report["final_loss"] = result.final_loss;
  report["epoch_loss"] = result.epoch_loss;
  write_file_atomic(dir / "train_report.json", json_line(report));
  spdlog::info("train: {} steps, final loss {:.4g}", result.steps, result.final_loss);
  return kExitOk;
}

struct SourceSetup {
  std::optional<PolicyNet> net;
  ActionSourceFactory factory;
};

SourceSetup make_source(const Options& o, const RunConfig& rc, const TaskSpec& spec, const KeypointLayout& layout) {
  SourceSetup s;
  if (o.source == "expert") {
    s.factory = expert_factory(spec, layout, rc.policy.stride);
  } else if (o.source == "max-force") {
    s.factory = expert_factory(spec, layout, rc.policy.stride, 10.0 * spec.crush_force);
  } else if (o.source == "policy") {
    if (o.untrained) {
      PolicyConfig pc = rc.policy;
      pc.num_robot_points = layout.size();
      pc.num_object_points = spec.object_keypoints.size();
      s.net.emplace(pc);
    } else {
      if (o.model.empty()) throw ConfigError("--model is required for the policy source (or pass --untrained)");
      s.net.emplace(load_model(o.model));
    }
    if (s.net->config().num_robot_points != layout.size() ||
        s.net->config().num_object_points != spec.object_keypoints.size()) {
      throw ContractError("model keypoint counts do not match the layout / task");
    }
  } else {
    throw ConfigError("--source must be policy, expert or max-force");
  }
  return s;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(',', start);
    const std::string tok = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + tok + "' is not an unsigned integer");
    }
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return seeds;
}

int cmd_rollout_or_eval(const Options& o, bool eval) {
  const RunConfig rc = resolve_config(o, true);
  const fs::path dir = out_dir(rc);
  const TaskSpec spec = task_of(rc);
  const KeypointLayout layout = layout_of(rc);
  SourceSetup setup = make_source(o, rc, spec, layout);
  if (setup.net) setup.factory = policy_factory(*setup.net, rc.rollout.decay);
  std::vector<std::uint64_t> seeds;
  if (!o.seeds.empty()) {
    seeds = parse_seed_list(o.seeds);
  } else {
    const std::size_t n = eval ? rc.episodes : 1;
    if (n == 0) throw ConfigError("--episodes must be >= 1");
    for (std::size_t i = 0; i < n; ++i) seeds.push_back(derive_seed(rc.seed, "eval", i));
  }
  if (!eval && seeds.size() != 1) throw ConfigError("rollout runs exactly one episode; use eval for several");
  const EvalReport report = evaluate(setup.factory, spec, layout, rc.controller, rc.rollout, seeds);
  if (!eval) {
    write_file_atomic(dir / "episode.json", episode_to_json(report.records.front(), spec, rc.controller, rc.rollout));
    const auto& r = report.records.front();
    spdlog::info("rollout: {} ({}), peak force {:.1f}", r.success ? "success" : "failure", r.reason, r.peak_force);
    return kExitOk;
  }
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    write_file_atomic(dir / "episodes" / fmt::format("episode_{:04d}.json", i),
                      episode_to_json(report.records[i], spec, rc.controller, rc.rollout));
  }
  write_file_atomic(dir / "report.json", report_to_json(report, spec, rc.controller, rc.rollout));
  spdlog::info("eval: success {}/{} ({:.2f}), crush {}, drop {}, mean peak force {:.1f}", report.successes,
               report.episodes, report.success_rate, report.crush_episodes, report.drop_episodes,
               report.mean_peak_force);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  setup_logging();
  CLI::App app{"Force-feedback imitation pipeline: calibration, demos, retargeting, training, rollout."};
  app.require_subcommand(1);
  Options o;
  auto common = [&o](CLI::App* sub, bool seed) {
    sub->add_option("--config", o.config, "run config file (key = value)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--task", o.task, "built-in task name or task spec file");
    sub->add_option("--layout", o.layout, "keypoint layout file");
    if (seed) sub->add_option("--seed", o.seed, "run seed");
  };
  auto* calibrate = app.add_subcommand("calibrate", "fit a sensor-norm to Newton curve from a weighing-scale session");
  calibrate->add_option("session", o.session, "session CSV")->required();
  calibrate->add_option("--config", o.config, "run config file");
  calibrate->add_option("--out", o.out, "output directory");

  auto* gen = app.add_subcommand("gen-demos", "generate scripted demonstrations");
  common(gen, true);
  gen->add_option("--count,--episodes", o.count, "number of demonstrations");
  gen->add_flag("--hand", o.write_hand, "also write synthetic hand tracks");
  gen->add_flag("--pixels", o.pixels, "hand tracks as two-view pixels (writes rig.txt)");
  gen->add_option("--rig", o.rig, "camera rig for --pixels");

  auto* retarget = app.add_subcommand("retarget", "turn a hand track into a demonstration");
  common(retarget, true);
  retarget->add_option("hand", o.hand, "hand track file")->required();
  retarget->add_option("--rig", o.rig, "camera rig file (pixel tracks)");

  auto* trn = app.add_subcommand("train", "train a policy on a directory of demonstrations");
  common(trn, true);
  trn->add_option("--demos", o.demos, "directory of demo .jsonl files");
  trn->add_flag("--mask-force", o.mask_force, "hide the force channel from the policy");

  auto* roll = app.add_subcommand("rollout", "run one closed-loop episode");
  auto* ev = app.add_subcommand("eval", "evaluate over several seeds");
  for (auto* sub : {roll, ev}) {
    common(sub, true);
    sub->add_option("--model", o.model, "model file");
    sub->add_flag("--untrained", o.untrained, "use a zero-parameter network");
    sub->add_option("--source", o.source, "policy | expert | max-force");
    sub->add_option("--seeds", o.seeds, "comma-separated episode seeds");
    sub->add_flag("--binary", o.binary, "replace the force controller by full closure");
  }
  ev->add_option("--episodes", o.episodes, "number of episodes");

  std::vector<const char*> argv;
  argv.push_back("ftf");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (calibrate->parsed()) return cmd_calibrate(o);
    if (gen->parsed()) return cmd_gen_demos(o);
    if (retarget->parsed()) return cmd_retarget(o);
    if (trn->parsed()) return cmd_train(o);
    if (roll->parsed()) return cmd_rollout_or_eval(o, false);
    if (ev->parsed()) return cmd_rollout_or_eval(o, true);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const DegeneracyError& e) {
    spdlog::error("{}", e.what());
    return kExitDegenerate;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitContract;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace ftf
