#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mtlsed/checkpoint.hpp"
#include "mtlsed/data.hpp"
#include "mtlsed/dsp.hpp"
#include "mtlsed/gradcheck.hpp"
#include "mtlsed/loss.hpp"
#include "mtlsed/metrics.hpp"
#include "mtlsed/milpool.hpp"
#include "mtlsed/model.hpp"

namespace py = pybind11;
using namespace mtlsed;

namespace {

template <typename Real>
using Array = py::array_t<Real, py::array::c_style | py::array::forcecast>;

template <typename Real>
Tensor<Real> to_tensor(const Array<Real>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<Real>(shape, std::vector<Real>(a.data(), a.data() + a.size()));
}

template <typename Real>
py::array_t<Real> to_array(const Tensor<Real>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<Real> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

py::dict scores(const metrics::Scores& s) {
  py::dict d;
  d["micro_f"] = s.micro_f;
  d["macro_f"] = s.macro_f;
  d["per_class_f"] = s.per_class_f;
  return d;
}

py::dict trace_dict(const model::ShapeTrace& s) {
  py::dict d;
  d["input"] = s.input;
  d["shared_output"] = s.shared_output;
  d["scene_pooled_time"] = s.scene_pooled_time;
  d["scene_output"] = s.scene_output;
  d["event_features"] = s.event_features;
  d["frame_logits"] = s.frame_logits;
  d["bag_logits"] = s.bag_logits;
  return d;
}

class Model {
 public:
  explicit Model(const std::string& path) : ckpt_(model::load_checkpoint(path)) {}

  py::dict predict(const Array<float>& features) const {
    Tensor<float> x = to_tensor(features);
    const bool single = x.rank() == 2;
    if (single) x = x.reshaped({1, x.dim(0), x.dim(1)});
    const auto r = model::forward(ckpt_.arch, ckpt_.params, x, ckpt_.pooling, model::Mode::eval);
    auto strip = [&](const Tensor<float>& t) {
      if (!single || t.size() == 0) return to_array(t);
      return to_array(t.reshaped(Shape(t.shape().begin() + 1, t.shape().end())));
    };
    py::dict d;
    d["scene_probs"] = strip(r.output.scene_probs);
    d["frame_probs"] = strip(r.output.frame_probs);
    if (ckpt_.pooling) d["bag_probs"] = strip(r.output.bag_probs);
    return d;
  }

  std::string pooling() const { return ckpt_.pooling ? std::string(milpool::to_string(*ckpt_.pooling)) : "none"; }
  std::size_t n_frames() const { return ckpt_.arch.n_frames; }
  std::size_t n_mels() const { return ckpt_.arch.n_mels; }

 private:
  model::Checkpoint ckpt_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Log-mel frontend, MIL pooling, losses, metrics and checkpoint inference";

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "log_mel",
      [](const Array<float>& samples, std::uint32_t sample_rate, std::size_t n_mels) {
        dsp::DspConfig cfg;
        cfg.sample_rate = sample_rate;
        cfg.n_mels = n_mels;
        cfg.validate();
        dsp::Waveform w{std::vector<float>(samples.data(), samples.data() + samples.size()), sample_rate};
        return to_array(dsp::log_mel_energy(w, cfg).data);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("n_mels") = 64,
      "(T, n_mels) log-mel energies with 40 ms frames and a 20 ms hop.");

  m.def(
      "pool",
      [](const std::string& kind, const std::vector<double>& values, std::optional<std::vector<double>> attention) {
        const auto k = milpool::parse_pooling(kind);
        if (values.empty()) throw InvalidInput("pool: empty input");
        const std::vector<double> a = attention.value_or(std::vector<double>{});
        if (k == milpool::PoolingKind::attention && a.size() != values.size()) {
          throw InvalidInput("pool: attention needs one logit per value");
        }
        return milpool::pool_scalar<double>(k, values, a);
      },
      py::arg("kind"), py::arg("values"), py::arg("attention") = py::none());

  m.def(
      "scene_ce",
      [](const std::vector<double>& probs, std::size_t target) {
        return loss::scene_ce<double>(probs, loss::one_hot(probs.size(), target));
      },
      py::arg("probs"), py::arg("target"));
  m.def(
      "event_bce_strong",
      [](const Array<double>& probs, const Array<double>& roll) {
        return loss::event_bce_strong(to_tensor(probs), to_tensor(roll));
      },
      py::arg("frame_probs"), py::arg("roll"));
  m.def(
      "event_weak_loss",
      [](const Array<double>& frame, const Array<double>& bag, const Array<double>& weak, double gamma, double zeta) {
        return loss::event_weak_loss(to_tensor(frame), to_tensor(bag), to_tensor(weak), gamma, zeta);
      },
      py::arg("frame_probs"), py::arg("bag_probs"), py::arg("weak"), py::arg("gamma") = 0.5, py::arg("zeta") = 0.05);

  m.def(
      "scene_scores",
      [](const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth, std::size_t classes) {
        return scores(metrics::scene_scores(pred, truth, classes));
      },
      py::arg("predicted"), py::arg("truth"), py::arg("classes"));
  m.def(
      "event_frame_scores",
      [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& truth) {
        return scores(metrics::event_frame_scores(to_tensor(pred), to_tensor(truth)));
      },
      py::arg("predicted"), py::arg("truth"));

  m.def("shape_trace", [] { return trace_dict(model::shape_trace(model::ArchConfig::full_size())); });

  m.def("gradcheck_ops", &gradcheck::registered_ops);
  m.def(
      "gradcheck",
      [](const std::string& op, std::size_t seeds) { return gradcheck::check_op(op, seeds).max_rel_error; },
      py::arg("op"), py::arg("seeds") = 20, "Largest relative error of the finite-difference check.");

  m.def(
      "synth_clip",
      [](std::size_t index, std::uint64_t seed, double clip_seconds) {
        data::SynthConfig cfg;
        cfg.seed = seed;
        cfg.clip_seconds = clip_seconds;
        cfg.n_clips = index + 1;
        const auto c = data::synth_clip(cfg, index);
        py::array_t<float> wave(static_cast<py::ssize_t>(c.wave.samples.size()));
        std::copy(c.wave.samples.begin(), c.wave.samples.end(), wave.mutable_data());
        return py::make_tuple(wave, data::annotation_to_json(c.annotation));
      },
      py::arg("index"), py::arg("seed") = 0, py::arg("clip_seconds") = 10.0,
      "Waveform and JSON annotation of one synthetic clip.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("predict", &Model::predict, py::arg("features"))
      .def_property_readonly("pooling", &Model::pooling)
      .def_property_readonly("n_frames", &Model::n_frames)
      .def_property_readonly("n_mels", &Model::n_mels);
}
