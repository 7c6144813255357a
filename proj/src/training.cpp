#include "atmgcn/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "atmgcn/errors.hpp"

namespace atmgcn {

// ---------------------------------------------------------------------------
// Loss and optimiser

Var focal_loss(const Var& probabilities, std::size_t label, double gamma, double alpha) {
  const Shape& s = probabilities.shape();
  if (s.size() != 1) {
    throw DimensionError("focal_loss: expected a probability vector, got " + shape_string(s));
  }
  if (label >= s[0]) {
    throw InputError("focal_loss: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(s[0]) + ")");
  }
  if (gamma < 0.0) throw ConfigError("focal_loss: gamma must be >= 0");
  const double raw = probabilities.value()[label];
  const double p = std::max(raw, kProbabilityFloor);
  const double value = -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  const Var in[] = {probabilities};
  return make_result(
      Tensor::scalar(value), in,
      [raw, p, gamma, alpha, label](const Tensor& g, std::span<Tensor* const> gi) {
        if (!gi[0] || raw < kProbabilityFloor) return;
        // d/dp of -alpha (1-p)^gamma log p
        double focusing = 0.0;
        if (gamma != 0.0 && p < 1.0) {
          focusing = gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p);
        }
        const double d = alpha * (focusing - std::pow(1.0 - p, gamma) / p);
        (*gi[0])[label] += g.item() * d;
      });
}

void adamw_step(const NamedParams& params, std::span<const Tensor> grads, AdamWState& state,
                double lr, const AdamWConfig& config) {
  if (grads.size() != params.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const auto& [name, p] : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adamw_step: optimiser state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].second->shape() ||
        state.first_moment[i].shape() != params[i].second->shape()) {
      throw DimensionError("adamw_step: shape mismatch for parameter " + params[i].first);
    }
    if (!grads[i].all_finite()) {
      throw TrainingError("adamw_step: non-finite gradient for parameter " + params[i].first);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].second->values();
    const auto g = grads[i].values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] = p[k] - lr * (m_hat / (std::sqrt(v_hat) + config.eps)) - lr * config.weight_decay * p[k];
    }
  }
}

double lr_schedule(std::size_t epoch, double lr0, double decay) {
  return lr0 * std::pow(decay, static_cast<double>(epoch));
}

double default_lr_decay() { return std::pow(10.0, -2.0 / 50.0); }

// ---------------------------------------------------------------------------
// Protocol and metrics

std::vector<Fold> loso_split(std::span<const std::string> subjects) {
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < subjects.size(); ++i) by_subject[subjects[i]].push_back(i);
  if (by_subject.size() < 2) {
    throw ProtocolError("loso_split: need at least 2 distinct subjects, got " +
                        std::to_string(by_subject.size()));
  }
  std::vector<Fold> folds;
  for (const auto& [subject, members] : by_subject) {
    Fold f;
    f.subject = subject;
    f.test = members;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      if (subjects[i] != subject) f.train.push_back(i);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<Fold> loso_split(std::span<const FrameSequence> dataset) {
  std::vector<std::string> subjects;
  for (const FrameSequence& s : dataset) subjects.push_back(s.subject_id);
  return loso_split(subjects);
}

Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t c = confusion.size();
  Metrics m;
  m.confusion = confusion;
  m.per_class.resize(c);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < c; ++i) {
    ClassCounts& k = m.per_class[i];
    k.tp = confusion[i][i];
    for (std::size_t j = 0; j < c; ++j) {
      k.n += confusion[i][j];
      if (j != i) k.fp += confusion[j][i];
    }
    k.fn = k.n - k.tp;
    correct += k.tp;
    total += k.n;
  }
  double f1_sum = 0.0, recall_sum = 0.0;
  std::size_t f1_classes = 0, recall_classes = 0;
  for (const ClassCounts& k : m.per_class) {
    if (k.n == 0 && k.fp == 0) continue;
    f1_sum += 2.0 * static_cast<double>(k.tp) / static_cast<double>(2 * k.tp + k.fp + k.fn);
    ++f1_classes;
    if (k.n > 0) {
      recall_sum += static_cast<double>(k.tp) / static_cast<double>(k.n);
      ++recall_classes;
    }
  }
  m.uf1 = f1_classes ? f1_sum / static_cast<double>(f1_classes) : 0.0;
  m.uar = recall_classes ? recall_sum / static_cast<double>(recall_classes) : 0.0;
  m.acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return m;
}

Metrics compute_metrics(std::span<const std::size_t> predictions,
                        std::span<const std::size_t> labels, std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw InputError("compute_metrics: " + std::to_string(predictions.size()) +
                     " predictions but " + std::to_string(labels.size()) + " labels");
  }
  std::vector<std::vector<std::size_t>> confusion(num_classes,
                                                  std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes) {
      throw InputError("compute_metrics: class index outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    ++confusion[labels[i]][predictions[i]];
  }
  return metrics_from_confusion(confusion);
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("train: lr0 must be positive");
  if (!(lr_decay > 0.0)) throw ConfigError("train: lr_decay must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (focal_gamma < 0.0) throw ConfigError("train: focal_gamma must be >= 0");
  for (double a : focal_alpha) {
    if (!(a >= 0.0)) throw ConfigError("train: focal_alpha entries must be >= 0");
  }
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0 && adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) {
    throw ConfigError("train: AdamW betas must lie in [0, 1)");
  }
  if (!(adamw.eps > 0.0)) throw ConfigError("train: AdamW eps must be positive");
  if (adamw.weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
}

std::vector<double> inverse_frequency_alpha(std::span<const std::size_t> labels,
                                            std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  for (std::size_t l : labels) counts.at(l) += 1.0;
  std::vector<double> alpha(num_classes, 1.0);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] > 0) {
      alpha[k] = 1.0 / counts[k];
      sum += alpha[k];
      ++present;
    }
  }
  if (present == 0) return alpha;
  const double mean = sum / static_cast<double>(present);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] > 0) alpha[k] /= mean;
  }
  return alpha;
}

namespace {

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::seed_seq seq(parts.begin(), parts.end());
  return std::mt19937_64(seq);
}

}  // namespace

TrainResult train(const TrainConfig& config, const ModelConfig& model,
                  std::span<const FrameSequence> dataset, const EpochCallback& on_epoch) {
  config.validate();
  model.validate();
  if (dataset.empty()) throw InputError("train: empty dataset");
  std::vector<std::size_t> labels;
  for (const FrameSequence& s : dataset) {
    if (s.label >= model.num_classes) {
      throw InputError("train: label " + std::to_string(s.label) + " of subject " +
                       s.subject_id + " outside [0, " + std::to_string(model.num_classes) + ")");
    }
    labels.push_back(s.label);
  }
  std::vector<double> alpha = config.focal_alpha;
  if (alpha.empty()) alpha = inverse_frequency_alpha(labels, model.num_classes);
  if (alpha.size() != model.num_classes) {
    throw ConfigError("train: focal_alpha needs " + std::to_string(model.num_classes) +
                      " entries, got " + std::to_string(alpha.size()));
  }

  TrainResult result;
  auto init_rng = seeded({config.seed, 1});
  result.params = init_model(model, init_rng);
  AdamWState state;
  const NamedParams named = result.params.fields();

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config.lr0, config.lr_decay);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = seeded({config.seed, 2, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::vector<std::size_t> preds, truth;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> batch_grads;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        auto aug_rng = seeded({config.seed, 3, epoch, idx});
        const FrameSequence sample = augment(dataset[idx], aug_rng, config.augment);
        Tape tape;
        const ModelVars vars = bind(result.params, &tape);
        const ForwardResult fwd = forward_model(sample, vars, model);
        const Var loss = focal_loss(fwd.probabilities, sample.label, config.focal_gamma,
                                    alpha[sample.label]);
        loss_sum += loss.value().item();
        preds.push_back(fwd.prediction().predicted);
        truth.push_back(sample.label);
        std::vector<Tensor> grads = collect_gradients(vars, tape.backward(loss));
        if (batch_grads.empty()) {
          batch_grads = std::move(grads);
        } else {
          for (std::size_t k = 0; k < grads.size(); ++k) {
            auto acc = batch_grads[k].values();
            const auto g = grads[k].values();
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (Tensor& g : batch_grads)
        for (double& v : g.values()) v *= inv;
      adamw_step(named, batch_grads, state, lr, config.adamw);
    }
    const Metrics m = compute_metrics(preds, truth, model.num_classes);
    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(dataset.size()), m.uf1, m.uar, m.acc};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

Evaluation evaluate(const ModelParams& params, const ModelConfig& model,
                    std::span<const FrameSequence> dataset) {
  Evaluation ev;
  for (const FrameSequence& s : dataset) {
    ev.predictions.push_back(predict(s, params, model).predicted);
    ev.labels.push_back(s.label);
  }
  ev.metrics = compute_metrics(ev.predictions, ev.labels, model.num_classes);
  return ev;
}

LosoReport run_loso(const TrainConfig& config, const ModelConfig& model,
                    std::span<const FrameSequence> dataset, std::size_t jobs,
                    const std::function<void(const std::string&)>& log) {
  config.validate();
  model.validate();
  if (dataset.empty()) throw InputError("loso: empty dataset");
  const std::vector<Fold> folds = loso_split(dataset);
  LosoReport report;
  report.folds.resize(folds.size());
  std::mutex log_mutex;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    log(msg);
  };

  auto run_fold = [&](std::size_t f) {
    const Fold& fold = folds[f];
    std::vector<FrameSequence> train_set, test_set;
    for (std::size_t i : fold.train) train_set.push_back(dataset[i]);
    for (std::size_t i : fold.test) test_set.push_back(dataset[i]);
    TrainConfig fold_config = config;
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(f)};
    std::uint64_t fold_seed[1];
    seq.generate(fold_seed, fold_seed + 1);
    fold_config.seed = fold_seed[0];
    TrainResult trained = train(fold_config, model, train_set, [&](const EpochRecord& r) {
      say("fold " + fold.subject + " epoch " + std::to_string(r.epoch) +
          " loss " + std::to_string(r.loss) + " uf1 " + std::to_string(r.uf1));
    });
    FoldReport& out = report.folds[f];
    out.subject = fold.subject;
    out.train_size = train_set.size();
    out.test_size = test_set.size();
    out.history = std::move(trained.history);
    out.test = evaluate(trained.params, model, test_set).metrics;
    out.train = evaluate(trained.params, model, train_set).metrics;
    say("fold " + fold.subject + " test uf1 " + std::to_string(out.test.uf1) + " uar " +
        std::to_string(out.test.uar));
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, folds.size()));
  if (jobs == 1) {
    for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(folds.size());
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t f; (f = next.fetch_add(1)) < folds.size();) {
          try {
            run_fold(f);
          } catch (...) {
            errors[f] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  const std::size_t c = model.num_classes;
  std::vector<std::vector<std::size_t>> pooled(c, std::vector<std::size_t>(c, 0));
  const double n = static_cast<double>(report.folds.size());
  for (const FoldReport& f : report.folds) {
    report.subject_mean.uf1 += f.test.uf1 / n;
    report.subject_mean.uar += f.test.uar / n;
    report.subject_mean.acc += f.test.acc / n;
    report.train_mean.uf1 += f.train.uf1 / n;
    report.train_mean.uar += f.train.uar / n;
    report.train_mean.acc += f.train.acc / n;
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) pooled[i][j] += f.test.confusion[i][j];
  }
  const Metrics pooled_metrics = metrics_from_confusion(pooled);
  report.pooled = {pooled_metrics.uf1, pooled_metrics.uar, pooled_metrics.acc};
  return report;
}

}  // namespace atmgcn
