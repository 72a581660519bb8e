// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria.

#include "ftf/cli.hpp"
#include "ftf/control.hpp"
#include "ftf/errors.hpp"
#include "ftf/formats.hpp"
#include "oracle.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <functional>
#include <numbers>
#include <random>
#include <set>

#include <stdlib.h>

using namespace ftf;

namespace {

// Tolerances and budgets.
constexpr double kTriangulateTol = 1e-6;   // m
constexpr double kKabschTol = 1e-9;
constexpr double kCodecTol = 1e-9;
constexpr double kGeometrySeconds = 5.0;
constexpr double kRetargetTol = 1e-9;
constexpr double kControllerSeconds = 1.0;
constexpr std::size_t kDisturbanceIters = 50;
constexpr double kContractionTol = 1e-9;    // relative, plus kContractionAbs
constexpr double kContractionAbs = 1e-10;   // N
constexpr double kCalibrationTol = 1e-9;
constexpr double kGradientTol = 1e-4;
constexpr double kOverfitMse = 1e-3;
constexpr std::size_t kOverfitSteps = 2000;
constexpr std::size_t kMinSuccesses = 9;
constexpr std::size_t kMinBinaryCrushes = 8;
constexpr double kEndToEndSeconds = 600.0;
constexpr double kMaskedGap = 0.10;

// Single-demo overfit run. Reference network, Adam with cosine decay.
constexpr std::size_t kOverfitBatch = 16;
constexpr double kOverfitLr = 3e-3;

// Pipeline run used by criteria 6 to 8.
constexpr const char* kPipelineConfig =
    "seed = 1\n"
    "demos = 30\n"
    "episodes = 10\n"
    "train.epochs = 10\n";

constexpr const char* kSmallConfig =
    "seed = 2\n"
    "demos = 3\n"
    "episodes = 2\n"
    "train.epochs = 1\n"
    "train.max_steps = 20\n";

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Mat3 simple_K(double f) {
  Mat3 K;
  K << f, 0, 320, 0, f, 240, 0, 0, 1;
  return K;
}

CameraRig random_rig(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> az(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> el(0.3, 1.0);
  std::uniform_real_distribution<double> dist(0.8, 1.5);
  std::uniform_real_distribution<double> f(400, 900);
  const Vec3 center(0.5, 0.0, 0.1);
  auto eye = [&] {
    const double a = az(rng), e = el(rng), d = dist(rng);
    return Vec3(center + d * Vec3(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)));
  };
  Vec3 ea = eye(), eb = eye();
  while ((ea - eb).norm() < 0.2) eb = eye();
  return {CameraModel(simple_K(f(rng)), look_at(ea, center)), CameraModel(simple_K(f(rng)), look_at(eb, center))};
}

Outcome geometry() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double tri = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const CameraRig rig = random_rig(rng);
    const Vec3 X = Vec3(0.5, 0, 0.1) + oracle::random_vec(rng, -0.25, 0.25);
    tri = std::max(tri, (triangulate(rig.a, project(rig.a, X), rig.b, project(rig.b, X)) - X).norm());
  }
  double kab = 0.0;
  for (int i = 0; i < 100; ++i) {
    const RigidTransform T(oracle::random_rotation(rng), oracle::random_vec(rng, -1, 1));
    std::vector<Vec3> src, dst;
    for (int k = 0; k < 8; ++k) {
      src.push_back(oracle::random_vec(rng, -0.3, 0.3));
      dst.push_back(T.rotation() * src.back() + T.translation());
    }
    kab = std::max(kab, oracle::max_abs(kabsch(src, dst).matrix() - T.matrix()));
  }
  double codec = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 R = oracle::random_rotation(rng);
    codec = std::max(codec, oracle::max_abs(decode_rotation6d(encode_rotation6d(R)) - R));
  }
  const double secs = seconds_since(t0);
  return {tri < kTriangulateTol && kab < kKabschTol && codec < kCodecTol && secs < kGeometrySeconds,
          fmt::format("triangulate {:.2e} m, kabsch {:.2e}, 6d {:.2e}, {:.2f} s", tri, kab, codec, secs)};
}

HandFrame frame_with_tips(const Vec3& thumb, const Vec3& index) {
  HandFrame f = synthesize_hand_frame(RigidTransform::identity(), 0.05, 0.0);
  f.keypoints[hand::kThumbTip] = thumb;
  f.keypoints[hand::kIndexTip] = index;
  return f;
}

Outcome retarget() {
  std::mt19937_64 rng(102);
  const KeypointLayout layout = KeypointLayout::default_layout();
  const Mat3 R0 = default_task(TaskKind::fragile_pick_place).reset_pose.rotation();
  double inv = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const RigidTransform P(oracle::random_rotation(rng), oracle::random_vec(rng, -1, 1));
    inv = std::max(inv, oracle::max_abs(keypoints_to_pose(pose_to_keypoints(P, layout), layout, R0).matrix() - P.matrix()));
    const auto pts = pose_to_keypoints(P, layout);
    const auto again = pose_to_keypoints(keypoints_to_pose(pts, layout, R0), layout);
    for (std::size_t k = 0; k < pts.size(); ++k) inv = std::max(inv, (again[k] - pts[k]).norm());
  }

  bool identity = true;
  for (int i = 0; i < 100; ++i) {
    const RigidTransform init(oracle::random_rotation(rng), oracle::random_vec(rng, -0.5, 0.5));
    const HandFrame f0 =
        synthesize_hand_frame(RigidTransform(oracle::random_rotation(rng), oracle::random_vec(rng, -0.5, 0.5)), 0.06, 0.0);
    const RigidTransform p = hand_to_pose(f0, f0, init);
    const Vec3 mid = 0.5 * (f0.keypoints[hand::kThumbTip] + f0.keypoints[hand::kIndexTip]);
    identity = identity && p.rotation() == init.rotation() && p.translation() == mid;
  }

  const bool rule = gripper_state(frame_with_tips({0, 0, 0}, {0.05, 0, 0})) &&
                    !gripper_state(frame_with_tips({0, 0, 0}, {0.07, 0, 0})) &&
                    !gripper_state(frame_with_tips({0, 0, 0}, {0.12, 0, 0}));
  return {inv < kRetargetTol && identity && rule,
          fmt::format("pose/keypoints {:.2e}, t=0 identity {}, 7 cm rule {}", inv, identity ? "exact" : "broken",
                      rule ? "ok" : "wrong")};
}

ObjectModel linear_object(double s, double g0, double crush) {
  ObjectModel o;
  o.contact_closure = g0;
  o.stiffness = s;
  o.crush_force = crush;
  o.slip_force = 50.0;
  o.keypoints = {Vec3(0.02, 0, 0), Vec3(-0.02, 0, 0), Vec3(0, 0.02, 0.01)};
  o.initial_pose = RigidTransform::from_translation(Vec3(0.5, 0.0, 0.03));
  return o;
}

Plant linear_plant(const ObjectModel& o) {
  PlantConfig cfg;
  cfg.sensor_noise_sigma = 0.0;
  cfg.max_closure_rate = 1.0;
  Plant p(o, cfg, o.initial_pose, 1);
  p.step_gripper(0.0);
  p.step_gripper(o.contact_closure);
  return p;
}

Outcome controller() {
  const auto t0 = Clock::now();
  const ControllerConfig cfg;
  const double target = 100.0;

  Plant deadbeat = linear_plant(linear_object(1000.0, 0.2, 150.0));
  const ControllerTrace one = force_feedback_gripper_control(deadbeat, target, cfg);
  const bool one_step = one.steps.size() == 1 && one.converged();

  bool contraction = true;
  for (double s : {200.0, 500.0, 1500.0}) {
    ControllerConfig fine = cfg;
    fine.epsilon = 1e-6;
    fine.max_inner_iters = 200;
    Plant p = linear_plant(linear_object(s, 0.2, 1e6));
    const ControllerTrace t = force_feedback_gripper_control(p, target, fine);
    const double ratio = 1.0 - cfg.k * s;
    contraction = contraction && t.converged() && t.steps.size() > 1;
    for (std::size_t i = 0; i + 1 < t.steps.size(); ++i) {
      const double e0 = target - t.steps[i].force;
      const double e1 = target - t.steps[i + 1].force;
      contraction = contraction && std::abs(e1 - ratio * e0) <= kContractionTol * std::abs(e0) + kContractionAbs;
    }
  }

  std::size_t worst_iters = 0;
  bool recovered = true;
  for (double shift : {0.03, -0.03, 0.1, -0.1}) {
    for (double s : {200.0, 1000.0, 1500.0}) {
      Plant p = linear_plant(linear_object(s, 0.2, 1e6));
      recovered = recovered && force_feedback_gripper_control(p, target, cfg).converged();
      p.set_contact_closure(0.2 + shift);
      const ControllerTrace t = force_feedback_gripper_control(p, target, cfg);
      recovered = recovered && t.converged() && std::abs(t.final_force - target) <= cfg.epsilon;
      worst_iters = std::max(worst_iters, t.steps.size());
    }
  }
  recovered = recovered && worst_iters <= kDisturbanceIters;
  const double secs = seconds_since(t0);
  return {one_step && contraction && recovered && secs < kControllerSeconds,
          fmt::format("k s = 1 iterations {}, contraction {}, disturbance {} iterations, {:.3f} s", one.steps.size(),
                      contraction ? "|1-ks|" : "off", worst_iters, secs)};
}

Outcome calibration() {
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  bool monotone = true;
  double oracle_gap = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 30);
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < n; ++i) pairs.emplace_back(0.1 + 100 * u(rng), 10 * u(rng) - 1.0);
    const CalibrationFit fit = fit_calibration(pairs);
    const auto& knots = fit.curve.knots();
    for (std::size_t i = 1; i < knots.size(); ++i) {
      monotone = monotone && knots[i].norm > knots[i - 1].norm && knots[i].newtons >= knots[i - 1].newtons;
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<double> y;
    for (const auto& p : pairs) y.push_back(p.second);
    const auto iso = oracle::isotonic(y);
    for (std::size_t i = 0; i < iso.size() && i + 1 < knots.size(); ++i) {
      oracle_gap = std::max(oracle_gap, std::abs(knots[i + 1].newtons - std::max(0.0, iso[i])));
    }
  }

  std::string session;
  for (int i = 0; i <= 40; ++i) {
    session += fmt::format("{},0,0,0,0,0,0,{},0,0,0,0,0,0,0,0,{}\n", 0.1 * i, 3.0 * i, 0.25 * i);
  }
  const CalibrationFit linear = fit_calibration(parse_calibration_session(session));

  double trip = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double x = 0.15 * i;
    trip = std::max(trip, std::abs(linear.curve.newton_to_norm(linear.curve.norm_to_newton(x)) - x));
  }
  return {monotone && oracle_gap < 1e-12 && linear.max_residual < kCalibrationTol && trip < kCalibrationTol,
          fmt::format("monotone {}, oracle gap {:.1e}, linear residual {:.1e}, round trip {:.1e}",
                      monotone ? "yes" : "no", oracle_gap, linear.max_residual, trip)};
}

double gradient_error() {
  PolicyConfig c;
  c.num_robot_points = 3;
  c.num_object_points = 2;
  c.history = 2;
  c.horizon = 2;
  c.width = 8;
  c.depth = 2;
  c.heads = 2;
  c.ffn_width = 8;
  PolicyNet net(c);
  net.initialize(105);
  std::mt19937_64 rng(105);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& p : net.parameters()) p += 0.3 * n(rng);
  Batch b;
  b.tokens = RowMatrix::NullaryExpr(static_cast<Eigen::Index>(3 * c.num_tokens()),
                                    static_cast<Eigen::Index>(c.token_dim()), [&] { return n(rng); });
  b.targets = RowMatrix::NullaryExpr(3, static_cast<Eigen::Index>(c.output_size()), [&] { return n(rng); });

  std::vector<double> grad(net.parameters().size());
  net.loss_and_gradient(b, grad);
  auto params = net.parameters();
  const double h = 1e-5;
  double worst = 0.0;
  for (const TensorInfo& t : net.tensors()) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = t.offset; i < t.offset + t.rows * t.cols; ++i) {
      const double keep = params[i];
      params[i] = keep + h;
      const double up = net.loss(b);
      params[i] = keep - h;
      const double down = net.loss(b);
      params[i] = keep;
      const double numeric = (up - down) / (2 * h);
      diff += (numeric - grad[i]) * (numeric - grad[i]);
      scale += (std::abs(numeric) + std::abs(grad[i])) * (std::abs(numeric) + std::abs(grad[i]));
    }
    // key biases have an exactly zero gradient; compare absolutely there
    worst = std::max(worst, std::sqrt(scale) < 1e-8 ? std::sqrt(diff) : std::sqrt(diff / scale));
  }
  return worst;
}

Outcome policy() {
  const double grad = gradient_error();

  const TaskSpec spec = default_task(TaskKind::fragile_pick_place);
  const KeypointLayout layout = KeypointLayout::default_layout();
  const std::vector<Demonstration> demos{scripted_expert(spec, sample_object(spec, 11), layout, 11).demo};
  PolicyNet net{PolicyConfig{}};
  TrainConfig tc;
  tc.epochs = 1000000;
  tc.max_steps = kOverfitSteps;
  tc.batch_size = kOverfitBatch;
  tc.learning_rate = kOverfitLr;
  tc.seed = 105;
  const TrainResult fit = train(net, demos, tc);

  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> u(-5, 5);
  bool idempotent = true;
  for (int trial = 0; trial < 200; ++trial) {
    Action a;
    for (int k = 0; k < 4; ++k) a.robot_points.push_back(oracle::random_vec(rng, -1, 1));
    a.gripper = u(rng);
    a.force = u(rng);
    std::vector<AgedAction> same;
    const std::size_t count = 1 + rng() % 10;
    for (std::size_t age = 0; age < count; ++age) same.push_back({a, age});
    const Action out = temporal_aggregate(same, std::abs(u(rng)));
    idempotent = idempotent && out.robot_points == a.robot_points && out.gripper == a.gripper && out.force == a.force;
  }

  int shapes = 0;
  for (std::size_t N : {3, 4, 6})
    for (std::size_t M : {0, 4})
      for (std::size_t L : {1, 2}) {
        ObservationWindow w;
        for (std::size_t t = 0; t < L; ++t) {
          w.robot.emplace_back(N, Vec3::Ones());
          w.object.emplace_back(M, Vec3::Zero());
          w.gripper.push_back(0.0);
          w.force.push_back(1.0);
        }
        const RowMatrix tok = tokenize(w);
        if (tok.rows() == static_cast<Eigen::Index>(N + M + 2) && tok.cols() == static_cast<Eigen::Index>(3 * L)) ++shapes;
      }

  return {grad < kGradientTol && fit.final_loss < kOverfitMse && fit.steps <= kOverfitSteps && idempotent && shapes == 12,
          fmt::format("gradient rel {:.1e}, overfit mse {:.2e} in {} steps, idempotent {}, shapes {}/12", grad,
                      fit.final_loss, fit.steps, idempotent ? "exact" : "no", shapes)};
}

// ---- pipeline criteria --------------------------------------------------------------

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::current_path() / ("acceptance-" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  std::string operator/(const std::string& rel) const { return (root / rel).string(); }
};

void cli(const std::vector<std::string>& args) {
  const int code = run_cli(args);
  if (code != kExitOk) throw std::runtime_error(fmt::format("ftf {} exited with {}", args.front(), code));
}

nlohmann::json report(const std::string& path) { return nlohmann::json::parse(read_file(path)); }

struct PipelineResult {
  std::size_t successes = 0, crushes = 0, binary_crushes = 0, masked_successes = 0;
  double seconds = 0.0;
};

PipelineResult& pipeline() {
  static PipelineResult r = [] {
    PipelineResult out;
    const Workspace ws("pipeline");
    write_file_atomic(ws.root / "run.cfg", kPipelineConfig);
    const std::string cfg = ws / "run.cfg";
    const auto t0 = Clock::now();
    cli({"gen-demos", "--config", cfg, "--out", ws / "demos"});
    cli({"train", "--config", cfg, "--demos", ws / "demos", "--out", ws / "model"});
    cli({"eval", "--config", cfg, "--model", ws / "model/model.ftfm", "--out", ws / "eval"});
    cli({"eval", "--config", cfg, "--model", ws / "model/model.ftfm", "--binary", "--out", ws / "binary"});
    out.seconds = seconds_since(t0);
    const auto e = report(ws / "eval/report.json");
    const auto b = report(ws / "binary/report.json");
    out.successes = e["successes"].get<std::size_t>();
    out.crushes = e["crush_episodes"].get<std::size_t>();
    out.binary_crushes = b["crush_episodes"].get<std::size_t>();

    cli({"train", "--config", cfg, "--demos", ws / "demos", "--mask-force", "--out", ws / "masked"});
    cli({"eval", "--config", cfg, "--model", ws / "masked/model.ftfm", "--out", ws / "masked-eval"});
    out.masked_successes = report(ws / "masked-eval/report.json")["successes"].get<std::size_t>();
    return out;
  }();
  return r;
}

Outcome end_to_end() {
  const PipelineResult& r = pipeline();
  return {r.successes >= kMinSuccesses && r.crushes == 0 && r.binary_crushes >= kMinBinaryCrushes &&
              r.seconds < kEndToEndSeconds,
          fmt::format("success {}/10, crushes {}, binary crushes {}/10, {:.0f} s", r.successes, r.crushes,
                      r.binary_crushes, r.seconds)};
}

Outcome masked_force() {
  const PipelineResult& r = pipeline();
  const double gap = std::abs(static_cast<double>(r.successes) - static_cast<double>(r.masked_successes)) / 10.0;
  return {gap <= kMaskedGap + 1e-12,
          fmt::format("masked {}/10 vs unmasked {}/10", r.masked_successes, r.successes)};
}

std::vector<std::pair<std::string, std::string>> tree(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), dir).string(), read_file(e.path()));
  }
  std::sort(files.begin(), files.end());
  return files;
}

Outcome determinism() {
  std::vector<std::vector<std::pair<std::string, std::string>>> runs;
  for (const char* name : {"repeat-a", "repeat-b"}) {
    const Workspace ws(name);
    write_file_atomic(ws.root / "run.cfg", kSmallConfig);
    const std::string cfg = ws / "run.cfg";
    cli({"gen-demos", "--config", cfg, "--out", ws / "out/demos"});
    cli({"train", "--config", cfg, "--demos", ws / "out/demos", "--out", ws / "out/model"});
    cli({"eval", "--config", cfg, "--model", ws / "out/model/model.ftfm", "--out", ws / "out/eval"});
    runs.push_back(tree(ws.root / "out"));
  }
  std::size_t differing = 0;
  for (std::size_t i = 0; i < std::min(runs[0].size(), runs[1].size()); ++i) {
    if (runs[0][i] != runs[1][i]) ++differing;
  }
  const bool same = runs[0].size() == runs[1].size() && differing == 0 && !runs[0].empty();
  return {same, fmt::format("{} files, {} differ", runs[0].size(), differing)};
}

}  // namespace

int main(int argc, char** argv) {
  // optional arguments pick criteria by number
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  spdlog::set_level(spdlog::level::warn);
  ::setenv("FTF_LOG", "warn", 0);  // the cli subcommands read their level from here
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"geometry", geometry},       {"retarget", retarget},         {"controller", controller},
      {"calibration", calibration}, {"policy", policy},             {"end-to-end", end_to_end},
      {"masked-force", masked_force}, {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    fmt::print("{} criterion {} {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
    std::fflush(stdout);
  }
  return failed;
}
