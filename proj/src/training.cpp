#include "cgcn/training.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "cgcn/errors.hpp"

namespace cgcn {

using nn::Graph;
using nn::Parameters;
using nn::ParamStore;
using nn::Var;

std::size_t worker_count() {
  const char* env = std::getenv("CGCN_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 256) throw ConfigError(std::string("CGCN_WORKERS must be in [1, 256], got ") + env);
  return static_cast<std::size_t>(v);
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next++;
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

std::vector<nn::PreparedCloud> prepare_all(const std::vector<const PointCloud*>& clouds,
                                           const nn::EncoderConfig& config) {
  std::vector<nn::PreparedCloud> out(clouds.size());
  parallel_for(clouds.size(), worker_count(), [&](std::size_t i) { out[i] = nn::prepare_cloud(*clouds[i], config); });
  return out;
}

struct PreparedPairs {
  std::vector<nn::PreparedCloud> source, target;
};

PreparedPairs prepare_pairs(const std::vector<RegistrationPair>& pairs, const nn::EncoderConfig& config) {
  std::vector<const PointCloud*> src, tgt;
  for (const auto& p : pairs) {
    src.push_back(&p.source);
    tgt.push_back(&p.target);
  }
  return {prepare_all(src, config), prepare_all(tgt, config)};
}

Var registration_graph(Graph& g, Parameters& params, const nn::Encoder& encoder, const nn::PreparedCloud& source,
                       const nn::PreparedCloud& target, double temperature) {
  const Var ds = encoder.forward(g, params, source).descriptors;
  const Var dt = encoder.forward(g, params, target).descriptors;
  const Var virt = reg::soft_correspondence(g, ds, dt, g.constant(reg::to_tensor(target.cloud->points)), temperature);
  return reg::procrustes(g, g.constant(reg::to_tensor(source.cloud->points)), virt);
}

struct StepResult {
  double loss = 0.0;
  nn::Gradients grads;
  bool skipped = false;
};

bool all_finite(const nn::Gradients& grads) {
  for (const auto& [name, t] : grads) {
    for (double x : t.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

double clip_gradients(nn::Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : grads) {
    for (double x : t.data) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, t] : grads) {
      for (double& x : t.data) x *= f;
    }
  }
  return norm;
}

[[noreturn]] void abort_non_finite(const ExperimentConfig& config, int epoch, std::size_t batch,
                                   const std::vector<std::size_t>& members, const std::vector<std::string>& names,
                                   const std::vector<StepResult>& steps) {
  nlohmann::ordered_json dump;
  dump["epoch"] = epoch;
  dump["batch"] = batch;
  for (std::size_t k = 0; k < members.size(); ++k) {
    nlohmann::ordered_json item;
    item["sample"] = members[k];
    item["name"] = names[members[k]];
    item["skipped"] = steps[k].skipped;
    item["loss"] = std::isfinite(steps[k].loss) ? nlohmann::json(steps[k].loss) : nlohmann::json(std::to_string(steps[k].loss));
    item["finite_gradients"] = all_finite(steps[k].grads);
    dump["members"].push_back(item);
  }
  std::string where;
  std::error_code ec;
  std::filesystem::create_directories(config.out, ec);
  const auto path = std::filesystem::path(config.out) / "nan_batch.json";
  std::ofstream f(path);
  if (f) {
    f << dump.dump(2) << "\n";
    where = "; batch dumped to " + path.string();
  }
  throw NumericalError("non-finite loss or gradient in epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch) + where);
}

// One SGD pass structure shared by both tasks: shuffled batches, per-sample
// gradients on workers, reduction in batch order.
template <typename StepFn>
std::vector<double> run_epochs(const ExperimentConfig& config, ParamStore& store, std::size_t samples,
                               const std::vector<std::string>& names, StepFn&& step, std::size_t& skipped) {
  nn::SgdMomentum opt(config.train.learning_rate, config.train.momentum);
  std::vector<double> losses;
  const std::size_t workers = worker_count();
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    std::vector<std::size_t> order(samples);
    for (std::size_t i = 0; i < samples; ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, 500 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t k = samples; k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);

    double total = 0.0;
    std::size_t used = 0;
    std::size_t batch_no = 0;
    for (std::size_t begin = 0; begin < samples; begin += config.train.batch, ++batch_no) {
      const std::size_t end = std::min(samples, begin + config.train.batch);
      const std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                             order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<StepResult> steps(members.size());
      parallel_for(members.size(), workers, [&](std::size_t k) { steps[k] = step(store, members[k]); });

      std::size_t batch_used = 0;
      for (std::size_t k = 0; k < steps.size(); ++k) {
        if (steps[k].skipped) continue;
        if (!std::isfinite(steps[k].loss) || !all_finite(steps[k].grads)) {
          abort_non_finite(config, epoch, batch_no, members, names, steps);
        }
        ++batch_used;
      }
      skipped += steps.size() - batch_used;
      if (batch_used == 0) continue;
      nn::Gradients grads;
      for (const auto& s : steps) {
        if (s.skipped) continue;
        nn::accumulate(grads, s.grads, 1.0 / static_cast<double>(batch_used));
        total += s.loss;
      }
      used += batch_used;
      const double norm = clip_gradients(grads, config.train.clip);
      if (std::getenv("CGCN_TRACE")) {
        std::fprintf(stderr, "epoch %d batch %zu loss %.6g grad-norm %.6g\n", epoch, batch_no,
                     total / static_cast<double>(used), norm);
      }
      opt.step(store, grads);
    }
    losses.push_back(used ? total / static_cast<double>(used) : 0.0);
  }
  return losses;
}

nn::Encoder make_encoder(const ExperimentConfig& config) { return nn::Encoder(config.model); }

Var classifier_logits(Graph& g, Parameters& params, const nn::Encoder& encoder, const nn::PreparedCloud& cloud) {
  const Var desc = encoder.forward(g, params, cloud).descriptors;
  const Var pooled = g.segment_max(desc, cloud.size());
  const Var hidden = g.relu(g.add(g.matmul(pooled, params("cls.h.w")), params("cls.h.b")));
  return g.add(g.matmul(hidden, params("cls.o.w")), params("cls.o.b"));
}

int argmax(const nn::Tensor& row) {
  int best = 0;
  for (std::size_t c = 1; c < row.cols; ++c) {
    if (row(0, c) > row(0, static_cast<std::size_t>(best))) best = static_cast<int>(c);
  }
  return best;
}

}  // namespace

ParamStore init_model(const ExperimentConfig& config, Task task) {
  ParamStore store;
  Rng rng(derive_seed(config.seed, 7));
  make_encoder(config).init_params(store, rng);
  if (task == Task::kClassify) {
    const std::size_t d = config.model.descriptor_dim, h = config.classify.head_hidden;
    const std::size_t c = config.classify.classes.size();
    store.create("cls.h.w", d, h, d, rng);
    store.create_zero("cls.h.b", 1, h);
    store.create("cls.o.w", h, c, h, rng);
    store.create_zero("cls.o.b", 1, c);
  }
  return store;
}

RigidTransform register_pair(const nn::Encoder& encoder, const ParamStore& params, const nn::PreparedCloud& source,
                             const nn::PreparedCloud& target, double temperature) {
  Graph g;
  Parameters p(g, params, /*trainable=*/false);
  return reg::to_transform(g.value(registration_graph(g, p, encoder, source, target, temperature)));
}

RegistrationEval evaluate_registration(const ExperimentConfig& config, const ParamStore& params,
                                       const std::vector<RegistrationPair>& pairs) {
  const nn::Encoder encoder = make_encoder(config);
  const auto prepared = prepare_pairs(pairs, config.model);
  RegistrationEval eval;
  eval.predictions.resize(pairs.size());
  std::vector<char> degenerate(pairs.size(), 0);
  parallel_for(pairs.size(), worker_count(), [&](std::size_t i) {
    try {
      eval.predictions[i] = register_pair(encoder, params, prepared.source[i], prepared.target[i], config.reg.temperature);
    } catch (const DegenerateGeometryError&) {
      eval.predictions[i] = RigidTransform::identity();
      degenerate[i] = 1;
    }
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    eval.truths.push_back(pairs[i].truth);
    eval.degenerate += static_cast<std::size_t>(degenerate[i]);
  }
  eval.metrics = reg::compute_metrics(eval.predictions, eval.truths);
  return eval;
}

RegistrationEval evaluate_icp(const ExperimentConfig& config, const std::vector<RegistrationPair>& pairs) {
  RegistrationEval eval;
  eval.predictions.resize(pairs.size());
  parallel_for(pairs.size(), worker_count(), [&](std::size_t i) {
    eval.predictions[i] = reg::icp_baseline(pairs[i].source.points, pairs[i].target.points, config.reg.icp_iterations,
                                            config.reg.icp_tolerance)
                              .transform;
  });
  for (const auto& p : pairs) eval.truths.push_back(p.truth);
  eval.metrics = reg::compute_metrics(eval.predictions, eval.truths);
  return eval;
}

RunState train_registration(const ExperimentConfig& config) {
  config.validate();
  RunState run;
  run.config = config;
  run.command = "train-reg";
  const auto train = make_pairs(config, Split::kTrain);
  const auto test = make_pairs(config, Split::kTest);
  const nn::Encoder encoder = make_encoder(config);
  const auto prepared = prepare_pairs(train, config.model);
  std::vector<std::string> names;
  for (const auto& p : train) names.push_back(p.name);

  run.params = init_model(config, Task::kRegister);
  run.baseline = evaluate_registration(config, run.params, test);

  const std::size_t degenerate_before = reg::degenerate_gradient_count();
  auto step = [&](const ParamStore& store, std::size_t i) {
    StepResult r;
    Graph g;
    Parameters p(g, store);
    Var rt;
    try {
      rt = registration_graph(g, p, encoder, prepared.source[i], prepared.target[i], config.reg.temperature);
    } catch (const DegenerateGeometryError&) {
      r.skipped = true;
      return r;
    }
    const Var loss = reg::loss_rt(g, rt, train[i].truth);
    g.backward(loss);
    r.loss = g.value(loss)(0, 0);
    r.grads = p.gradients();
    return r;
  };
  run.epoch_losses = run_epochs(config, run.params, train.size(), names, step, run.skipped_pairs);
  run.degenerate_gradients = reg::degenerate_gradient_count() - degenerate_before;

  run.result = evaluate_registration(config, run.params, test);
  run.icp = evaluate_icp(config, test);
  return run;
}

ClassificationEval evaluate_classification(const ExperimentConfig& config, const ParamStore& params,
                                           const std::vector<Sample>& samples) {
  const nn::Encoder encoder = make_encoder(config);
  ClassificationEval eval;
  eval.predictions.resize(samples.size());
  parallel_for(samples.size(), worker_count(), [&](std::size_t i) {
    const auto prepared = nn::prepare_cloud(samples[i].cloud, config.model);
    Graph g;
    Parameters p(g, params, /*trainable=*/false);
    eval.predictions[i] = argmax(g.value(classifier_logits(g, p, encoder, prepared)));
  });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += eval.predictions[i] == samples[i].label ? 1 : 0;
  eval.accuracy = samples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples.size());
  return eval;
}

RunState train_classification(const ExperimentConfig& config) {
  config.validate();
  RunState run;
  run.config = config;
  run.command = "train-cls";
  const auto train = make_labeled(config, Split::kTrain, 0.0);
  std::vector<int> labels;
  for (const auto& s : train) labels.push_back(s.label);
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); })) {
    throw ConfigError("classification training set holds a single class");
  }
  const auto aligned = make_labeled(config, Split::kTest, 0.0);
  const auto rotated = make_labeled(config, Split::kTest, config.classify.test_rotation);
  const nn::Encoder encoder = make_encoder(config);
  std::vector<const PointCloud*> clouds;
  std::vector<std::string> names;
  for (const auto& s : train) {
    clouds.push_back(&s.cloud);
    names.push_back(s.name);
  }
  const auto prepared = prepare_all(clouds, config.model);
  const std::size_t classes = config.classify.classes.size();

  run.params = init_model(config, Task::kClassify);
  run.baseline_accuracy = evaluate_classification(config, run.params, aligned).accuracy;
  auto step = [&](const ParamStore& store, std::size_t i) {
    StepResult r;
    Graph g;
    Parameters p(g, store);
    const Var logp = g.log_softmax_rows(classifier_logits(g, p, encoder, prepared[i]));
    nn::Tensor onehot(1, classes);
    onehot(0, static_cast<std::size_t>(train[i].label)) = 1.0;
    const Var loss = g.scale(g.sum(g.mul(logp, g.constant(std::move(onehot)))), -1.0);
    g.backward(loss);
    r.loss = g.value(loss)(0, 0);
    r.grads = p.gradients();
    return r;
  };
  ExperimentConfig schedule = config;
  schedule.train.learning_rate = config.classify.learning_rate;
  run.epoch_losses = run_epochs(schedule, run.params, train.size(), names, step, run.skipped_pairs);
  run.accuracy_aligned = evaluate_classification(config, run.params, aligned).accuracy;
  run.accuracy_rotated = evaluate_classification(config, run.params, rotated).accuracy;
  return run;
}

}  // namespace cgcn
