// Python bindings: numpy in, numpy out, configs as JSON text (the Python
// package wraps dicts).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "atomkit/config_io.hpp"
#include "atomkit/curation.hpp"
#include "atomkit/geometry.hpp"
#include "atomkit/graph_features.hpp"
#include "atomkit/model.hpp"
#include "atomkit/optim.hpp"
#include "atomkit/training.hpp"
#include "atomkit/trajectory.hpp"

namespace py = pybind11;
using namespace atomkit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_vec3(const Array& a, const char* what) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw DimensionError(std::string(what) + " must have shape (N, 3)");
  std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {r(i, 0), r(i, 1), r(i, 2)};
  return out;
}

py::array_t<double> from_vec3(std::span<const Vec3> v) {
  py::array_t<double> out({static_cast<py::ssize_t>(v.size()), py::ssize_t{3}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int k = 0; k < 3; ++k) w(i, k) = v[i][k];
  return out;
}

py::array_t<double> from_mat3(const Mat3& m) {
  py::array_t<double> out({py::ssize_t{3}, py::ssize_t{3}});
  auto w = out.mutable_unchecked<2>();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) w(i, j) = m[i][j];
  return out;
}

MoleculeState make_state(const Array& positions, const Array& velocities, const std::vector<int>& z, double time) {
  MoleculeState s;
  s.positions = to_vec3(positions, "positions");
  s.velocities = to_vec3(velocities, "velocities");
  s.atomic_numbers = z;
  s.time = time;
  s.validate();
  return s;
}

Json parse_json_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

py::array_t<double> frames_array(const std::vector<std::vector<Vec3>>& frames) {
  const auto p = static_cast<py::ssize_t>(frames.size());
  const auto n = static_cast<py::ssize_t>(frames.empty() ? 0 : frames[0].size());
  py::array_t<double> out({p, n, py::ssize_t{3}});
  auto w = out.mutable_unchecked<3>();
  for (py::ssize_t a = 0; a < p; ++a)
    for (py::ssize_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) w(a, i, k) = frames[a][i][k];
  return out;
}

Frames to_frames(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("frames must have shape (P, N, 3)");
  auto r = a.unchecked<3>();
  Frames f(static_cast<std::size_t>(a.shape(0)), std::vector<Vec3>(static_cast<std::size_t>(a.shape(1))));
  for (py::ssize_t p = 0; p < a.shape(0); ++p)
    for (py::ssize_t i = 0; i < a.shape(1); ++i) f[p][i] = {r(p, i, 0), r(p, i, 1), r(p, i, 2)};
  return f;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["name"] = r.name;
  d["s2s"] = r.s2s;
  d["s2t"] = r.s2t;
  d["static_s2s"] = r.static_s2s;
  d["static_s2t"] = r.static_s2t;
  d["train_loss"] = r.train_loss;
  d["val_s2s"] = r.val_s2s;
  d["val_s2t"] = r.val_s2t;
  d["best_epoch"] = r.best_epoch;
  d["steps"] = r.steps;
  d["wall_seconds"] = r.wall_seconds;
  return d;
}

std::vector<SmilesEntry> entries(const std::vector<std::pair<std::string, std::string>>& items) {
  std::vector<SmilesEntry> out;
  for (const auto& [s, n] : items) out.push_back({s, n});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "atomkit native core";

  // Later registrations are tried first, so subclasses come after their bases.
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const IoError& e) {
      py::set_error(PyExc_OSError, e.what());
    }
  });
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  const auto& smiles = py::register_exception<SmilesError>(m, "SmilesError", m.attr("FormatError"));
  (void)smiles;
  py::register_exception<CanonicalizationDegenerate>(m, "CanonicalizationDegenerate", PyExc_ArithmeticError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  // ---- geometry ----
  m.def("random_rotation", [](std::uint64_t seed) { return from_mat3(random_rotation(seed)); }, py::arg("seed"));
  m.def(
      "canonicalize",
      [](const Array& x, const Array& v) {
        MoleculeState s = make_state(x, v, std::vector<int>(static_cast<std::size_t>(x.shape(0)), 6), 0.0);
        const auto f = canonicalize(s);
        py::dict d;
        d["rotation"] = from_mat3(f.rotation);
        d["centroid"] = std::vector<double>(f.centroid.begin(), f.centroid.end());
        d["positions"] = from_vec3(f.positions);
        d["velocities"] = from_vec3(f.velocities);
        return d;
      },
      py::arg("positions"), py::arg("velocities"));

  // ---- graph features ----
  m.def(
      "radius_graph",
      [](const Array& x, double eps) { return radius_graph(to_vec3(x, "positions"), eps).edges; },
      py::arg("positions"), py::arg("epsilon") = kCovalentRadius);
  m.def(
      "rwpe",
      [](const Array& x, std::size_t k, double eps) {
        const auto enc = rwpe(radius_graph(to_vec3(x, "positions"), eps), k);
        py::array_t<double> out({static_cast<py::ssize_t>(enc.n_nodes), static_cast<py::ssize_t>(k)});
        std::copy(enc.values.begin(), enc.values.end(), out.mutable_data());
        return out;
      },
      py::arg("positions"), py::arg("walk_length") = kDefaultWalkLength, py::arg("epsilon") = kCovalentRadius);

  // ---- trajectories ----
  py::class_<Trajectory>(m, "Trajectory")
      .def_readonly("name", &Trajectory::name)
      .def_readonly("dt", &Trajectory::dt)
      .def_readonly("atomic_numbers", &Trajectory::atomic_numbers)
      .def_property_readonly("n_atoms", &Trajectory::n_atoms)
      .def_property_readonly("n_frames", &Trajectory::n_frames)
      .def_property_readonly("positions",
                             [](const Trajectory& t) {
                               std::vector<std::vector<Vec3>> f;
                               for (const auto& s : t.frames) f.push_back(s.positions);
                               return frames_array(f);
                             })
      .def_property_readonly("velocities",
                             [](const Trajectory& t) {
                               std::vector<std::vector<Vec3>> f;
                               for (const auto& s : t.frames) f.push_back(s.velocities);
                               return frames_array(f);
                             })
      .def("save", [](const Trajectory& t, const std::string& path) { save_trajectory(t, path); })
      .def("__repr__", [](const Trajectory& t) {
        std::ostringstream s;
        s << "<Trajectory '" << t.name << "' " << t.n_atoms() << " atoms, " << t.n_frames() << " frames>";
        return s.str();
      });
  m.def("load_trajectory", [](const std::string& path) { return load_trajectory(path); }, py::arg("path"));
  m.def(
      "generate_toy_trajectory",
      [](const std::string& config) { return generate_toy_trajectory(toy_config_from_json(parse_json_text(config))); },
      py::arg("config_json"));
  m.def("stability_metrics", [](const Trajectory& t) {
    const auto r = stability_metrics(t);
    return py::make_tuple(r.com_drift, r.per_step_motion);
  });

  // ---- model ----
  py::class_<AtomModel>(m, "AtomModel")
      .def(py::init([](const std::string& config, std::uint64_t seed) {
             return AtomModel(model_config_from_json(parse_json_text(config)), seed);
           }),
           py::arg("config_json"), py::arg("seed") = 0)
      .def_property_readonly("config_json", [](const AtomModel& a) { return to_json(a.config()).dump(); })
      .def_property_readonly("parameter_count", &AtomModel::parameter_count)
      .def(
          "predict",
          [](const AtomModel& a, const Array& x, const Array& v, const std::vector<int>& z,
             const std::vector<double>& timestamps, double time) {
            const auto s = make_state(x, v, z, time);
            py::gil_scoped_release release;
            const auto frames = atom_forward(s, timestamps, a);
            py::gil_scoped_acquire acquire;
            return frames_array(frames);
          },
          py::arg("positions"), py::arg("velocities"), py::arg("atomic_numbers"), py::arg("timestamps"),
          py::arg("time") = 0.0)
      .def("save", [](const AtomModel& a, const std::string& path) { save_checkpoint(path, a.named_parameters()); })
      .def("load", [](AtomModel& a, const std::string& path) { a.load_parameters(load_checkpoint(path)); });

  // ---- training ----
  m.def("s2t_mse", [](const Array& p, const Array& t) { return s2t_mse(to_frames(p), to_frames(t)); });
  m.def("s2s_mse", [](const Array& p, const Array& t) { return s2s_mse(to_frames(p), to_frames(t)); });
  m.def(
      "train_single_task",
      [](const Trajectory& traj, AtomModel& model, const std::string& config) {
        const auto rc = train_config_from_json(parse_json_text(config));
        MetricsReport r;
        {
          py::gil_scoped_release release;
          r = train_single_task(traj, model, rc);
        }
        return report_dict(r);
      },
      py::arg("trajectory"), py::arg("model"), py::arg("config_json"));
  m.def(
      "sweep_steps",
      [](const AtomModel& model, const Trajectory& traj, const std::vector<std::size_t>& steps, double horizon,
         std::size_t begin, std::size_t end, std::size_t stride) {
        const auto rows = sweep_steps(model, traj, steps, horizon, begin, end == 0 ? traj.n_frames() : end, stride, 64);
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["n_steps"] = r.n_steps;
          d["horizon"] = r.horizon;
          d["s2s"] = r.result.s2s;
          d["s2t"] = r.result.s2t;
          d["static_s2s"] = r.result.static_s2s;
          d["static_s2t"] = r.result.static_s2t;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("trajectory"), py::arg("steps"), py::arg("horizon"), py::arg("begin") = 0,
      py::arg("end") = 0, py::arg("stride") = 1);

  // ---- curation ----
  m.def(
      "parse_smiles",
      [](const std::string& smiles) {
        const auto g = parse_smiles(smiles);
        py::dict d;
        d["heavy_atoms"] = g.heavy_atom_count();
        d["carbon"] = g.count_element(6);
        d["nitrogen"] = g.count_element(7);
        d["oxygen"] = g.count_element(8);
        d["hydrogens"] = g.hydrogen_count();
        d["bonds"] = g.bonds.size();
        d["rings"] = g.ring_count();
        d["components"] = g.component_count();
        return d;
      },
      py::arg("smiles"));
  m.def(
      "fingerprint_bits",
      [](const std::string& smiles, std::size_t radius, std::size_t nbits) {
        const auto fp = morgan_fingerprint(parse_smiles(smiles), radius, nbits);
        std::vector<std::size_t> bits;
        for (std::size_t b = 0; b < fp.size(); ++b)
          if (fp.test(b)) bits.push_back(b);
        return bits;
      },
      py::arg("smiles"), py::arg("radius") = 2, py::arg("nbits") = 2048);
  m.def(
      "tanimoto",
      [](const std::string& a, const std::string& b, std::size_t radius, std::size_t nbits) {
        return tanimoto(morgan_fingerprint(parse_smiles(a), radius, nbits),
                        morgan_fingerprint(parse_smiles(b), radius, nbits));
      },
      py::arg("a"), py::arg("b"), py::arg("radius") = 2, py::arg("nbits") = 2048);
  m.def(
      "select_candidates",
      [](const std::vector<std::pair<std::string, std::string>>& seeds,
         const std::vector<std::pair<std::string, std::string>>& pool, const std::string& config) {
        const auto cfg = selection_config_from_json(parse_json_text(config));
        const auto r = select_candidates(entries(seeds), entries(pool), cfg);
        py::list accepted, rejected;
        for (const auto& a : r.accepted) {
          py::dict d;
          d["pool_index"] = a.pool_index;
          d["smiles"] = a.smiles;
          d["name"] = a.name;
          d["seed_index"] = a.seed_index;
          d["seed_similarity"] = a.seed_similarity;
          accepted.append(d);
        }
        for (const auto& x : r.rejected) {
          py::dict d;
          d["pool_index"] = x.pool_index;
          d["smiles"] = x.smiles;
          d["name"] = x.name;
          d["criterion"] = x.criterion;
          d["reason"] = x.reason;
          rejected.append(d);
        }
        return py::make_tuple(accepted, rejected);
      },
      py::arg("seeds"), py::arg("pool"), py::arg("config_json"));
}
