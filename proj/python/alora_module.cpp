// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "alora/adapter.hpp"
#include "alora/bench.hpp"
#include "alora/checkpoint.hpp"
#include "alora/cost.hpp"
#include "alora/engine.hpp"
#include "alora/error.hpp"
#include "alora/kv_cache.hpp"
#include "alora/synthetic.hpp"
#include "alora/trainer.hpp"
#include "alora/verify.hpp"

namespace py = pybind11;
using namespace alora;

namespace {

using Model = std::shared_ptr<ModelWeights>;

py::dict ledger_dict(const CostLedger& l) {
  py::dict d;
  d["matmul_flops"] = l.matmul_flops;
  d["attention_score_flops"] = l.attention_score_flops;
  d["softmax_ops"] = l.softmax_ops;
  d["rows_projected_fresh"] = l.rows_projected_fresh;
  d["rows_reused"] = l.rows_reused;
  d["cache_bytes_incremental"] = l.cache_bytes_incremental;
  d["wall_ns"] = l.wall_ns;
  d["total_flops"] = l.total_flops();
  d["overflowed"] = l.overflowed;
  return d;
}

std::vector<std::string> provenance_strings(const KvCache& cache) {
  std::vector<std::string> out;
  for (const auto& p : cache.provenance()) out.push_back(p.to_string());
  return out;
}

DecodeSettings settings(std::size_t min_new, std::size_t max_new, bool record) {
  return {min_new, max_new, record};
}

}  // namespace

PYBIND11_MODULE(_alora, m) {
  m.doc() = "Activated LoRA inference engine";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<ContractViolation>(m, "ContractViolation", error);
  py::register_exception<IoError>(m, "IoError", error);
  py::register_exception<FormatError>(m, "FormatError", error);
  py::register_exception<NotInvoked>(m, "NotInvoked", error);
  py::register_exception<DivergenceError>(m, "DivergenceError", error);

  m.attr("EOS_TOKEN") = kEosToken;

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def(py::init([](std::size_t layers, std::size_t heads, std::size_t d_model,
                       std::size_t vocab, std::size_t max_positions, double rope_theta) {
             ModelConfig c;
             c.n_layers = layers;
             c.n_heads = heads;
             c.d_model = d_model;
             c.d_head = heads > 0 ? d_model / heads : 0;
             c.vocab_size = vocab;
             c.max_positions = max_positions;
             c.rope_theta = rope_theta;
             c.validate();
             return c;
           }),
           py::kw_only(), py::arg("n_layers") = 4, py::arg("n_heads") = 4,
           py::arg("d_model") = 64, py::arg("vocab_size") = 256,
           py::arg("max_positions") = 8192, py::arg("rope_theta") = 10000.0)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("d_head", &ModelConfig::d_head)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_positions", &ModelConfig::max_positions)
      .def_readwrite("rope_theta", &ModelConfig::rope_theta)
      .def_property_readonly("kv_row_bytes", &ModelConfig::kv_row_bytes)
      .def("validate", &ModelConfig::validate)
      .def(py::self == py::self)
      .def("__repr__", [](const ModelConfig& c) {
        std::ostringstream s;
        s << "ModelConfig(n_layers=" << c.n_layers << ", n_heads=" << c.n_heads
          << ", d_model=" << c.d_model << ", vocab_size=" << c.vocab_size
          << ", max_positions=" << c.max_positions << ")";
        return s.str();
      });

  py::class_<ModelWeights, Model>(m, "Model")
      .def_static(
          "random",
          [](const ModelConfig& c, std::uint64_t seed) {
            return std::make_shared<ModelWeights>(random_model(c, seed));
          },
          py::arg("config") = ModelConfig{}, py::arg("seed") = 0)
      .def_static("load",
                  [](const std::filesystem::path& p) {
                    return std::make_shared<ModelWeights>(load_checkpoint(p));
                  })
      .def("save", [](const ModelWeights& w, const std::filesystem::path& p) {
        save_checkpoint(w, p);
      })
      .def("to_bytes", [](const ModelWeights& w) {
        const auto bytes = encode_checkpoint(w);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      })
      .def_property_readonly("config", [](const ModelWeights& w) { return w.config; });

  py::class_<AdapterSpec>(m, "Adapter")
      .def_readwrite("id", &AdapterSpec::id)
      .def_property(
          "mode", [](const AdapterSpec& s) { return std::string(mode_name(s.mode)); },
          [](AdapterSpec& s, const std::string& mode) { s.mode = parse_mode(mode); })
      .def_readonly("rank", &AdapterSpec::rank)
      .def_readonly("alpha", &AdapterSpec::alpha)
      .def_readwrite("invocation_sequence", &AdapterSpec::invocation_sequence)
      .def_property_readonly("targets",
                             [](const AdapterSpec& s) {
                               std::vector<std::string> out;
                               for (auto p : s.targets) out.emplace_back(projection_name(p));
                               return out;
                             })
      .def("validate", &AdapterSpec::validate)
      .def("save", [](const AdapterSpec& s, const std::filesystem::path& p) {
        save_adapter(s, p);
      })
      .def("to_bytes",
           [](const AdapterSpec& s) {
             const auto bytes = encode_adapter(s);
             return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
           })
      .def_static("load", [](const std::filesystem::path& p) { return load_adapter(p); })
      .def(py::self == py::self);

  m.def(
      "random_adapter",
      [](const ModelConfig& config, std::uint64_t seed, const std::string& mode,
         std::size_t rank, float alpha, std::vector<TokenId> invocation, AdapterId id,
         double a_std, double b_std) {
        RandomAdapterOptions o;
        o.id = id;
        o.mode = parse_mode(mode);
        o.rank = rank;
        o.alpha = alpha;
        o.invocation_sequence = std::move(invocation);
        o.a_std = a_std;
        o.b_std = b_std;
        return random_adapter(config, o, seed);
      },
      py::arg("config"), py::arg("seed") = 0, py::kw_only(), py::arg("mode") = "alora",
      py::arg("rank") = 8, py::arg("alpha") = 32.0f,
      py::arg("invocation") = std::vector<TokenId>{}, py::arg("id") = 1,
      py::arg("a_std") = 0.02, py::arg("b_std") = 0.02);

  m.def(
      "find_invocation",
      [](const std::vector<TokenId>& tokens, const AdapterSpec& spec) {
        return find_invocation(tokens, spec).t_invoke;
      },
      py::arg("tokens"), py::arg("adapter"));

  py::class_<KvCache>(m, "KvCache")
      .def_property_readonly("length", &KvCache::length)
      .def_property_readonly("sealed_length", &KvCache::sealed_length)
      .def_property_readonly("row_bytes", &KvCache::row_bytes)
      .def_property_readonly("incremental_bytes",
                             [](const KvCache& c) { return incremental_bytes(c); })
      .def("token_ids", &KvCache::token_ids)
      .def("provenance", &provenance_strings)
      .def("key_row",
           [](const KvCache& c, std::size_t layer, std::size_t pos) {
             const auto row = c.key_row(layer, pos);
             return std::vector<float>(row.begin(), row.end());
           })
      .def("value_row", [](const KvCache& c, std::size_t layer, std::size_t pos) {
        const auto row = c.value_row(layer, pos);
        return std::vector<float>(row.begin(), row.end());
      });

  py::class_<PrefillResult>(m, "PrefillResult")
      .def_property_readonly(
          "cache", [](const PrefillResult& r) -> const KvCache& { return r.cache; },
          py::return_value_policy::reference_internal)
      .def_readonly("last_logits", &PrefillResult::last_logits)
      .def_readonly("t_invoke", &PrefillResult::t_invoke)
      .def_readonly("reused_positions", &PrefillResult::reused_positions);

  py::class_<GenerationResult>(m, "GenerationResult")
      .def_readonly("new_tokens", &GenerationResult::new_tokens)
      .def_property_readonly(
          "cache", [](const GenerationResult& r) -> const KvCache& { return r.cache; },
          py::return_value_policy::reference_internal)
      .def_property_readonly("cost",
                             [](const GenerationResult& r) { return ledger_dict(r.cost); })
      .def_property_readonly(
          "first_token_cost",
          [](const GenerationResult& r) { return ledger_dict(r.first_token_cost); })
      .def_readonly("t_invoke", &GenerationResult::t_invoke)
      .def_readonly("reused_positions", &GenerationResult::reused_positions)
      .def_readonly("logits", &GenerationResult::logits);

  py::class_<Engine>(m, "Engine")
      .def(py::init<Model>(), py::arg("model"))
      .def_property_readonly("config", [](const Engine& e) { return e.config(); })
      .def(
          "prefill",
          [](const Engine& e, std::vector<TokenId> prompt, const AdapterSpec* adapter,
             const KvCache* reuse) {
            GenerationRequest r;
            r.prompt_tokens = std::move(prompt);
            r.adapter = adapter;
            r.reuse_cache = reuse;
            return e.prefill(r);
          },
          py::arg("prompt"), py::arg("adapter") = nullptr, py::arg("reuse_cache") = nullptr)
      .def(
          "generate",
          [](const Engine& e, std::vector<TokenId> prompt, const AdapterSpec* adapter,
             const KvCache* reuse, std::size_t min_new, std::size_t max_new,
             bool record) {
            GenerationRequest r;
            r.prompt_tokens = std::move(prompt);
            r.adapter = adapter;
            r.reuse_cache = reuse;
            r.min_new_tokens = min_new;
            r.max_new_tokens = max_new;
            r.record_logits = record;
            return e.generate(r);
          },
          py::arg("prompt"), py::arg("adapter") = nullptr, py::arg("reuse_cache") = nullptr,
          py::kw_only(), py::arg("min_new_tokens") = 0, py::arg("max_new_tokens") = 16,
          py::arg("record_logits") = false)
      .def(
          "invoke_intrinsic",
          [](const Engine& e, const KvCache& base, const std::vector<TokenId>& extra,
             const AdapterSpec& adapter, std::size_t min_new, std::size_t max_new,
             bool record) {
            return e.invoke_intrinsic(base, extra, adapter, settings(min_new, max_new, record));
          },
          py::arg("base_cache"), py::arg("extra_tokens"), py::arg("adapter"), py::kw_only(),
          py::arg("min_new_tokens") = 0, py::arg("max_new_tokens") = 16,
          py::arg("record_logits") = false)
      .def(
          "lora_invoke",
          [](const Engine& e, const std::vector<TokenId>& tokens, const AdapterSpec& adapter,
             std::size_t min_new, std::size_t max_new, bool record) {
            return e.lora_invoke(tokens, adapter, settings(min_new, max_new, record));
          },
          py::arg("tokens"), py::arg("adapter"), py::kw_only(), py::arg("min_new_tokens") = 0,
          py::arg("max_new_tokens") = 16, py::arg("record_logits") = false)
      .def(
          "fanout",
          [](const Engine& e, const KvCache& base, const std::vector<AdapterSpec>& adapters,
             const std::vector<std::vector<TokenId>>& extras, std::size_t min_new,
             std::size_t max_new) {
            std::vector<const AdapterSpec*> ptrs;
            for (const auto& a : adapters) ptrs.push_back(&a);
            return e.fanout(base, ptrs, extras, settings(min_new, max_new, false));
          },
          py::arg("base_cache"), py::arg("adapters"), py::arg("extra_tokens"), py::kw_only(),
          py::arg("min_new_tokens") = 0, py::arg("max_new_tokens") = 16)
      .def(
          "resume_base",
          [](const Engine& e, const GenerationResult& adapter_result,
             const std::vector<TokenId>& continuation, std::size_t min_new,
             std::size_t max_new) {
            return e.resume_base(adapter_result, continuation,
                                 settings(min_new, max_new, false));
          },
          py::arg("adapter_result"), py::arg("continuation"), py::kw_only(),
          py::arg("min_new_tokens") = 0, py::arg("max_new_tokens") = 16);

  m.def(
      "predict_first_token",
      [](const ModelConfig& config, std::size_t t_cache, std::size_t t_new,
         const std::string& mode, std::size_t n_adapters, std::size_t rank) {
        CostQuery q;
        q.config = config;
        q.t_cache = t_cache;
        q.t_new = t_new;
        q.mode = parse_mode(mode);
        q.n_adapters = n_adapters;
        q.rank = rank;
        const CostPrediction p = predict_first_token(q);
        py::dict d;
        d["matmul_flops"] = p.matmul_flops;
        d["attention_score_flops"] = p.attention_score_flops;
        d["softmax_ops"] = p.softmax_ops;
        d["rows_projected_fresh"] = p.rows_projected_fresh;
        d["cache_bytes"] = p.cache_bytes;
        d["total_flops"] = p.total_flops();
        return d;
      },
      py::arg("config"), py::arg("t_cache"), py::arg("t_new"), py::kw_only(),
      py::arg("mode") = "alora", py::arg("n_adapters") = 1, py::arg("rank") = 8);

  py::class_<SftExample>(m, "SftExample")
      .def(py::init([](std::vector<TokenId> context, std::vector<TokenId> invocation,
                       std::vector<TokenId> target) {
             return SftExample{std::move(context), std::move(invocation), std::move(target)};
           }),
           py::arg("context"), py::arg("invocation"), py::arg("target"))
      .def_readwrite("context", &SftExample::context)
      .def_readwrite("invocation", &SftExample::invocation)
      .def_readwrite("target", &SftExample::target)
      .def("sequence", &SftExample::sequence)
      .def(py::self == py::self);

  m.def(
      "make_synthetic_task",
      [](const std::string& task, std::size_t examples, std::uint64_t seed,
         std::size_t distractors, std::size_t n_values, std::size_t distractor_vocab) {
        TaskSizes s;
        s.examples = examples;
        s.distractors = distractors;
        s.n_values = n_values;
        s.distractor_vocab = distractor_vocab;
        return make_synthetic_task(parse_task(task), s, seed);
      },
      py::arg("task"), py::arg("examples") = 1000, py::arg("seed") = 0, py::kw_only(),
      py::arg("distractors") = 8, py::arg("n_values") = 8, py::arg("distractor_vocab") = 32);

  m.def(
      "task_invocation", [](const std::string& task) { return task_invocation(parse_task(task)); },
      py::arg("task"));

  m.def(
      "train",
      [](const Model& model, const std::vector<SftExample>& dataset, const std::string& mode,
         std::vector<TokenId> invocation, std::size_t steps, double lr,
         std::size_t batch_size, std::size_t rank, double alpha, double dropout,
         std::uint64_t seed, const std::string& precision, std::size_t eval_every,
         std::optional<std::vector<SftExample>> eval_set) {
        TrainConfig c;
        c.steps = steps;
        c.learning_rate = lr;
        c.batch_size = batch_size;
        c.rank = rank;
        c.alpha = alpha;
        c.dropout_rate = dropout;
        c.seed = seed;
        c.precision = parse_precision(precision);
        c.eval_every = eval_every;
        const AdapterSpec initial =
            init_adapter(model->config, c, 1, parse_mode(mode), std::move(invocation));
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(dataset, initial, *model, c, eval_set ? &*eval_set : nullptr);
        }
        py::list history;
        for (const auto& row : result.history) {
          py::dict d;
          d["step"] = row.step;
          d["loss"] = row.loss;
          d["eval_exact_match"] = row.eval_exact_match;
          history.append(d);
        }
        return py::make_tuple(result.adapter, history);
      },
      py::arg("model"), py::arg("dataset"), py::kw_only(), py::arg("mode") = "alora",
      py::arg("invocation") = std::vector<TokenId>{2, 3}, py::arg("steps") = 2000,
      py::arg("learning_rate") = 1e-3, py::arg("batch_size") = 8, py::arg("rank") = 8,
      py::arg("alpha") = 32.0, py::arg("dropout") = 0.05, py::arg("seed") = 0,
      py::arg("precision") = "f32", py::arg("eval_every") = 100,
      py::arg("eval_set") = py::none());

  m.def(
      "exact_match",
      [](const Model& model, const std::vector<SftExample>& examples,
         const AdapterSpec& adapter) { return exact_match(examples, adapter, *model); },
      py::arg("model"), py::arg("examples"), py::arg("adapter"));

  m.def(
      "verify",
      [](std::size_t trials, std::uint64_t seed, const ModelConfig& config,
         const Model& model, const AdapterSpec* adapter) {
        VerifyOptions o;
        o.trials = trials;
        o.seed = seed;
        o.random_config = config;
        o.weights = model ? model.get() : nullptr;
        o.adapter = adapter;
        VerifyReport report;
        {
          py::gil_scoped_release release;
          report = run_verify_suite(o);
        }
        return py::make_tuple(report.passed(), format_report(report));
      },
      py::arg("trials") = 100, py::arg("seed") = 0, py::kw_only(),
      py::arg("config") = ModelConfig{}, py::arg("model") = Model{},
      py::arg("adapter") = nullptr);

  m.def(
      "run_bench",
      [](const Model& model, std::vector<std::size_t> prompt_lengths,
         std::size_t answer_tokens, std::size_t eval_tokens, std::size_t new_tokens,
         std::vector<std::size_t> n_adapters, std::size_t lora_rank,
         std::size_t alora_rank, std::size_t repetitions, std::uint64_t seed) {
        BenchPlan p;
        p.prompt_lengths = std::move(prompt_lengths);
        p.answer_tokens = answer_tokens;
        p.eval_tokens = eval_tokens;
        p.new_tokens = new_tokens;
        p.n_adapters = std::move(n_adapters);
        p.lora_rank = lora_rank;
        p.alora_rank = alora_rank;
        p.repetitions = repetitions;
        p.seed = seed;
        BenchOutput out;
        {
          py::gil_scoped_release release;
          out = run_bench(model, p);
        }
        std::ostringstream csv;
        write_bench_csv(csv, out.rows);
        return csv.str();
      },
      py::arg("model"), py::kw_only(),
      py::arg("prompt_lengths") = std::vector<std::size_t>{256, 1024, 4096},
      py::arg("answer_tokens") = 256, py::arg("eval_tokens") = 16,
      py::arg("new_tokens") = 16, py::arg("n_adapters") = std::vector<std::size_t>{1, 5},
      py::arg("lora_rank") = 8, py::arg("alora_rank") = 32, py::arg("repetitions") = 3,
      py::arg("seed") = 0);
}
