#include "gatekd/cli.hpp"
#include "gatekd/confidence.hpp"
#include "gatekd/config.hpp"
#include "gatekd/tasks.hpp"
#include "gatekd/verify.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace gatekd;

namespace {

py::dict example_dict(const ReasoningExample& ex) {
  py::dict d;
  d["task"] = std::string(to_string(ex.task));
  d["input"] = ex.input_text;
  d["target"] = ex.target_text;
  d["seed_id"] = ex.seed_id;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gatekd, m) {
  m.doc() = "Confidence-gated distillation core";

  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<NonFiniteLoss>(m, "NonFiniteLoss", PyExc_ArithmeticError);

  m.def("shannon_entropy", [](const std::vector<double>& p) { return shannon_entropy(p); }, py::arg("p"));
  m.def("confidence_exp", [](const std::vector<double>& p) { return confidence_exp(p); }, py::arg("p"));
  m.def(
      "confidence_normalized",
      [](const std::vector<double>& p, int vocab_size) {
        return confidence_normalized(p, vocab_size > 0 ? vocab_size : static_cast<int>(p.size()));
      },
      py::arg("p"), py::arg("vocab_size") = 0);

  m.def(
      "make_gates",
      [](const std::vector<double>& confidences, const std::string& strategy, double tau, double slope,
         bool ties_open) {
        GateParams gp;
        gp.strategy = parse_gate_strategy(strategy);
        gp.tau = tau;
        gp.slope = slope;
        gp.ties_open = ties_open;
        return make_gates(confidences, gp).weights;
      },
      py::arg("confidences"), py::arg("strategy") = "batch_relative", py::arg("tau") = 0.5,
      py::arg("slope") = 10.0, py::arg("ties_open") = false);

  m.def(
      "last_letter", [](const std::vector<std::string>& words) { return example_dict(make_last_letter(words)); },
      py::arg("words"));
  m.def(
      "gen_last_letter", [](int num_words, std::uint64_t seed) { return example_dict(gen_last_letter(num_words, seed)); },
      py::arg("num_words"), py::arg("seed"));
  m.def(
      "gen_shuffled_objects",
      [](int agents, int swaps, std::uint64_t seed) { return example_dict(gen_shuffled_objects(agents, swaps, seed)); },
      py::arg("num_agents"), py::arg("num_swaps"), py::arg("seed"));

  m.def("config_keys", &config_keys);
  m.def(
      "parse_config",
      [](const std::string& text) {
        py::dict d;
        for (const auto& [k, v] : parse_config_text(text).to_kv()) d[py::str(k)] = v;
        return d;
      },
      py::arg("text") = "", "Parses key = value text over the defaults and returns every key as a string.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"gatekd"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in process; returns (exit_code, stdout, stderr).");

  m.def("verify", [] {
    py::list out;
    for (const auto& c : run_invariant_suite()) out.append(py::make_tuple(c.name, c.passed, c.detail));
    return out;
  });
}
