#include "ftf/cli.hpp"
#include "ftf/control.hpp"
#include "ftf/errors.hpp"
#include "ftf/tactile.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace ftf;

namespace {

std::vector<Vec3> rows(const Eigen::Ref<const Eigen::MatrixX3d>& m) {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).transpose());
  return out;
}

Eigen::MatrixX3d stack(const std::vector<Vec3>& pts) {
  Eigen::MatrixX3d m(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return m;
}

CameraModel camera(const Mat3& K, const Mat4& extrinsics) {
  return CameraModel(K, RigidTransform::from_matrix(extrinsics));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Geometry, calibration, control and pipeline entry points";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DomainError>(m, "DomainError", base);
  auto contract = py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<DegeneracyError>(m, "DegeneracyError", base);
  py::register_exception<ParseError>(m, "ParseError", contract);
  py::register_exception<ConfigError>(m, "ConfigError", base);

  m.def("project", [](const Mat3& K, const Mat4& ext, const Vec3& X) { return project(camera(K, ext), X); },
        py::arg("K"), py::arg("extrinsics"), py::arg("point"));
  m.def(
      "triangulate",
      [](const Mat3& Ka, const Mat4& Ea, const Vec2& pa, const Mat3& Kb, const Mat4& Eb, const Vec2& pb) {
        return triangulate(camera(Ka, Ea), pa, camera(Kb, Eb), pb);
      },
      py::arg("K_a"), py::arg("extrinsics_a"), py::arg("px_a"), py::arg("K_b"), py::arg("extrinsics_b"),
      py::arg("px_b"));
  m.def(
      "kabsch",
      [](const Eigen::Ref<const Eigen::MatrixX3d>& src, const Eigen::Ref<const Eigen::MatrixX3d>& dst) {
        const auto a = rows(src), b = rows(dst);
        return kabsch(a, b).matrix();
      },
      py::arg("source"), py::arg("target"), "4x4 transform T with target ~ T(source)");
  m.def("encode_rotation6d", [](const Mat3& R) { return Vec6(encode_rotation6d(R).values); });
  m.def("decode_rotation6d", [](const Vec6& v) { return decode_rotation6d(Rotation6D{v}); });

  py::class_<KeypointLayout>(m, "KeypointLayout")
      .def_static("default", &KeypointLayout::default_layout)
      .def("names", &KeypointLayout::names)
      .def("__len__", &KeypointLayout::size);
  m.def(
      "pose_to_keypoints", [](const Mat4& pose, const KeypointLayout& layout) {
        return stack(pose_to_keypoints(RigidTransform::from_matrix(pose), layout));
      },
      py::arg("pose"), py::arg("layout"));
  m.def(
      "keypoints_to_pose",
      [](const Eigen::Ref<const Eigen::MatrixX3d>& pts, const KeypointLayout& layout, const Mat3& R0) {
        const auto p = rows(pts);
        return keypoints_to_pose(p, layout, R0).matrix();
      },
      py::arg("points"), py::arg("layout"), py::arg("R0") = Mat3::Identity());

  py::class_<CalibrationCurve>(m, "CalibrationCurve")
      .def(py::init([](const std::vector<std::pair<double, double>>& knots) {
        std::vector<CalibrationKnot> k;
        for (const auto& [n, f] : knots) k.push_back({n, f});
        return CalibrationCurve(std::move(k));
      }))
      .def("knots",
           [](const CalibrationCurve& c) {
             std::vector<std::pair<double, double>> out;
             for (const auto& k : c.knots()) out.emplace_back(k.norm, k.newtons);
             return out;
           })
      .def("norm_to_newton", &CalibrationCurve::norm_to_newton)
      .def("newton_to_norm", &CalibrationCurve::newton_to_norm);
  m.def(
      "fit_calibration",
      [](const std::vector<std::pair<double, double>>& pairs) {
        CalibrationFit fit = fit_calibration(pairs);
        return py::make_tuple(fit.curve, fit.max_residual, fit.pooled_count);
      },
      py::arg("pairs"), "(curve, max_residual, pooled_count) from (norm, newtons) pairs");

  m.def(
      "control_linear",
      [](double stiffness, double contact_closure, double start_closure, double target, double k, double epsilon,
         std::size_t max_iters) {
        ObjectModel o;
        o.contact_closure = contact_closure;
        o.stiffness = stiffness;
        o.crush_force = 1e9;
        o.slip_force = 1.0;
        o.keypoints = {Vec3(0.02, 0, 0), Vec3(-0.02, 0, 0), Vec3(0, 0.02, 0.01)};
        o.initial_pose = RigidTransform::from_translation(Vec3(0.5, 0.0, 0.03));
        PlantConfig pc;
        pc.sensor_noise_sigma = 0.0;
        pc.max_closure_rate = 1.0;
        Plant plant(o, pc, o.initial_pose, 0);
        plant.step_gripper(0.0);
        plant.step_gripper(start_closure);
        ControllerConfig cc;
        cc.k = k;
        cc.epsilon = epsilon;
        cc.max_inner_iters = max_iters;
        const ControllerTrace t = force_feedback_gripper_control(plant, target, cc);
        std::vector<double> forces;
        for (const auto& s : t.steps) forces.push_back(s.force);
        return py::make_tuple(forces, t.final_force, t.converged());
      },
      py::arg("stiffness"), py::arg("contact_closure"), py::arg("start_closure"), py::arg("target"),
      py::arg("k") = 0.001, py::arg("epsilon") = 5.0, py::arg("max_iters") = 50,
      "run the force controller on a noiseless hinge plant; returns (forces read before each update, final force, converged)");

  m.def(
      "run_cli", [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return run_cli(args);
      },
      py::arg("args"), "run an ftf subcommand, returns the exit code");
}
