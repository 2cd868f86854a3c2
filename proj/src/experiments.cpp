#include "hvi/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "hvi/bounds.hpp"
#include "hvi/data.hpp"
#include "hvi/error.hpp"
#include "hvi/grad.hpp"
#include "hvi/optim.hpp"
#include "hvi/oracle.hpp"
#include "hvi/stats.hpp"

namespace hvi {

namespace {

using Clock = std::chrono::steady_clock;

class RowSink {
 public:
  RowSink(const ExperimentConfig& cfg, const Progress& progress)
      : cfg_(cfg), progress_(progress), start_(Clock::now()) {}

  void add(long step, int K, int M, const std::string& estimator, const std::string& metric, double value,
           std::optional<double> lo = {}, std::optional<double> hi = {}) {
    CsvRow r;
    r.experiment = cfg_.experiment;
    r.seed = cfg_.seed;
    r.step = step;
    r.K = K;
    r.M = M;
    r.estimator = estimator;
    r.metric = metric;
    r.value = value;
    r.ci_low = lo;
    r.ci_high = hi;
    r.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
    rows_.push_back(r);
  }
  /// Mean with the empirical 90% interval of the replicate values.
  void add_ci(long step, int K, int M, const std::string& estimator, const std::string& metric,
              const std::vector<double>& values) {
    if (values.size() < 2) {
      add(step, K, M, estimator, metric, values.empty() ? std::nan("") : values[0]);
      return;
    }
    const auto ci = stats::ci90(values);
    // Keep ci_low <= value <= ci_high even when the mean falls outside the 5-95 band.
    const double m = stats::mean(values);
    add(step, K, M, estimator, metric, m, std::min(ci.low, m), std::max(ci.high, m));
  }
  void say(const std::string& msg) const {
    if (progress_) progress_(msg);
  }
  std::vector<CsvRow> take() { return std::move(rows_); }

 private:
  const ExperimentConfig& cfg_;
  const Progress& progress_;
  Clock::time_point start_;
  std::vector<CsvRow> rows_;
};

void apply_grads(ParamStore& store, const GradEstimate& g, double scale = 1.0) {
  for (const auto& [name, m] : g.grads) store.accumulate(name, m, scale);
}

std::vector<std::string> names_with_prefix(const ParamStore& store, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& n : store.names())
    if (n.rfind(prefix, 0) == 0) out.push_back(n);
  return out;
}

ParamFilter prefix_filter(const std::string& prefix, bool keep) {
  return [prefix, keep](const std::string& n) { return (n.rfind(prefix, 0) == 0) == keep; };
}

// ---- toy Laplace ------------------------------------------------------------------

/// Control-variate estimate of E_q(z) U_K: mean(U - log q(z)) + exact negative entropy.
double laplace_eval(const LaplaceScaleMixture& model, const AuxiliaryInference& tau, const ParamStore& store,
                    Index K, Index rows, double truth, RngStream rng) {
  Tape tape;
  Scope scope(tape, store, [](const std::string&) { return false; });
  const Conditioning none = Conditioning::none(rows);
  const auto [psi0, z] = model.sample_joint(scope, none, rng);
  const Estimate u = upper_bound_U_joint(scope, model, tau, none, z, psi0, K, rng);
  const Matrix exact = model.exact_log_marginal(z.value());
  std::vector<double> gap(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) gap[static_cast<std::size_t>(r)] = u.value.value()(r, 0) - exact(r, 0);
  return stats::mean(gap) + truth;
}

}  // namespace

std::string format_row(const CsvRow& r) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << r.experiment << ',' << r.seed << ',' << r.step << ',' << r.K << ',' << r.M << ',' << r.estimator << ','
     << r.metric << ',' << num(r.value) << ',' << (r.ci_low ? num(*r.ci_low) : "") << ','
     << (r.ci_high ? num(*r.ci_high) : "") << ',';
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", r.wall_ms);
  os << buf;
  return os.str();
}

void write_csv(std::ostream& out, const std::vector<CsvRow>& rows) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

std::vector<CsvRow> read_csv(const std::string& text) {
  std::vector<CsvRow> rows;
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  bool header = true;
  while (std::getline(in, line)) {
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (header) {
      if (line != kCsvHeader) throw DataError("<csv>", at, "unexpected header");
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 11) throw DataError("<csv>", at, "expected 11 fields");
    try {
      CsvRow r;
      r.experiment = f[0];
      r.seed = std::stoull(f[1]);
      r.step = std::stol(f[2]);
      r.K = std::stoi(f[3]);
      r.M = std::stoi(f[4]);
      r.estimator = f[5];
      r.metric = f[6];
      r.value = std::stod(f[7]);
      if (!f[8].empty()) r.ci_low = std::stod(f[8]);
      if (!f[9].empty()) r.ci_high = std::stod(f[9]);
      r.wall_ms = std::stod(f[10]);
      rows.push_back(r);
    } catch (const std::invalid_argument&) {
      throw DataError("<csv>", at, "malformed number");
    }
  }
  return rows;
}

std::vector<CsvRow> select(const std::vector<CsvRow>& rows, const std::string& metric, std::optional<int> K,
                           const std::string& estimator) {
  std::vector<CsvRow> out;
  for (const auto& r : rows)
    if (r.metric == metric && (!K || r.K == *K) && (estimator.empty() || r.estimator == estimator)) out.push_back(r);
  return out;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min<int>(n, static_cast<int>(std::thread::hardware_concurrency())));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---- toy Laplace ------------------------------------------------------------------

std::vector<CsvRow> run_toy_laplace(const ExperimentConfig& cfg, const Progress& progress) {
  RowSink sink(cfg, progress);
  const Index dim = cfg.dim;
  const LaplaceScaleMixture model(dim);
  const PriorAuxiliary prior_tau(model);
  const double truth = -static_cast<double>(dim) * (1.0 + std::log(2.0));
  std::vector<Index> hidden(cfg.hidden.begin(), cfg.hidden.end());
  if (hidden.empty()) hidden = {128, 128, 128};
  // The posterior factorizes over coordinates, so one network is shared by all of them.
  const GammaMlpAuxiliary tau("tau", dim, hidden, 1.0, 0.5, true, true);
  const int R = cfg.replicates;
  std::vector<int> eval_steps;
  for (int s = 0; s < cfg.steps; s += cfg.eval_every) eval_steps.push_back(s);
  eval_steps.push_back(cfg.steps);

  sink.add(0, 0, 1, "", "truth", truth);
  for (int K : cfg.k_list) {
    // trained[r][e], prior[r][e]
    std::vector<std::vector<double>> trained(static_cast<std::size_t>(R)), prior(static_cast<std::size_t>(R));
    parallel_for(R, [&](int r) {
      const RngStream root(cfg.seed, 1000 + static_cast<std::uint64_t>(r));
      ParamStore store;
      RngStream init = root.split(0);
      tau.init(store, init);
      Adam opt(AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8, cfg.amsgrad});
      std::size_t next_eval = 0;
      for (int step = 0; step <= cfg.steps; ++step) {
        if (next_eval < eval_steps.size() && eval_steps[next_eval] == step) {
          const RngStream er = root.split(1000000 + static_cast<std::uint64_t>(step));
          trained[static_cast<std::size_t>(r)].push_back(laplace_eval(model, tau, store, K, cfg.eval_batch, truth, er));
          prior[static_cast<std::size_t>(r)].push_back(
              laplace_eval(model, prior_tau, store, K, cfg.eval_batch, truth, er));
          ++next_eval;
        }
        if (step == cfg.steps) break;
        RngStream rng = root.split(1 + static_cast<std::uint64_t>(step));
        const GradEstimate g = grad_autodiff(
            [&](Scope& s, RngStream& rr) { return upper_objective(s, model, tau, cfg.batch_size, K, rr); }, store,
            rng);
        store.zero_grad();
        apply_grads(store, g);
        opt.step(store);
      }
      sink.say("toy-laplace K=" + std::to_string(K) + " replicate " + std::to_string(r) + " done");
    });
    for (std::size_t e = 0; e < eval_steps.size(); ++e) {
      std::vector<double> t, p;
      for (int r = 0; r < R; ++r) {
        t.push_back(trained[static_cast<std::size_t>(r)][e]);
        p.push_back(prior[static_cast<std::size_t>(r)][e]);
      }
      sink.add_ci(eval_steps[e], K, 1, "autodiff", "upper_trained", t);
      sink.add_ci(eval_steps[e], K, 1, "", "upper_prior", p);
    }
    std::vector<double> t, p;
    for (int r = 0; r < R; ++r) {
      t.push_back(trained[static_cast<std::size_t>(r)].back());
      p.push_back(prior[static_cast<std::size_t>(r)].back());
      sink.add(cfg.steps, K, 1, "autodiff", "upper_trained_replicate", t.back());
      sink.add(cfg.steps, K, 1, "", "upper_prior_replicate", p.back());
    }
    sink.add(cfg.steps, K, 1, "autodiff", "gap_ratio", (stats::mean(t) - truth) / (stats::mean(p) - truth));
  }
  return sink.take();
}

// ---- SNR ----------------------------------------------------------------------------

std::vector<CsvRow> run_snr(const ExperimentConfig& cfg, const Progress& progress) {
  RowSink sink(cfg, progress);
  const SnrTask task = make_snr_task(cfg.dim);
  const GaussianChain& q = *task.model;
  const LinearGaussianAuxiliary& tau = *task.tau;
  ParamStore store;
  RngStream init(cfg.seed, 1);
  tau.init(store, init);
  const ParamFilter eta = prefix_filter("tau/", true);

  Adam opt(AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8, cfg.amsgrad});
  const RngStream train_root(cfg.seed, 2);
  for (int step = 0; step < cfg.steps; ++step) {
    RngStream rng = train_root.split(static_cast<std::uint64_t>(step));
    const GradEstimate g = grad_autodiff(
        [&](Scope& s, RngStream& r) { return upper_objective(s, q, tau, cfg.batch_size, cfg.K, r); }, store, rng, eta);
    store.zero_grad();
    apply_grads(store, g);
    opt.step(store);
  }
  const Matrix A = store.value(tau.a_key());
  const Matrix b = store.value(tau.b_key());
  const double half_slope = q.posterior_slope();
  const Matrix b_opt = Matrix::Constant(1, cfg.dim, q.posterior_intercept());
  sink.add(cfg.steps, cfg.K, 1, "autodiff", "A_maxerr",
           (A - half_slope * Matrix::Identity(cfg.dim, cfg.dim)).cwiseAbs().maxCoeff());
  sink.add(cfg.steps, cfg.K, 1, "autodiff", "b_maxerr", (b - b_opt).cwiseAbs().maxCoeff());
  sink.say("snr: trained tau");

  std::vector<std::string> estimators = cfg.variants;
  if (estimators.empty()) estimators = {"autodiff", "dreg", "dreg_nob", "iwae_autodiff", "iwae_dreg"};
  for (int K : cfg.k_list) {
    const RngStream base(cfg.seed, 100 + static_cast<std::uint64_t>(K));
    std::map<std::string, SnrReport> reps;
    for (const auto& e : estimators) {
      GradFn fn;
      if (e == "autodiff")
        fn = [&](RngStream& r) {
          return grad_autodiff([&](Scope& s, RngStream& rr) { return upper_objective(s, q, tau, cfg.batch_size, K, rr); },
                               store, r, eta);
        };
      else if (e == "dreg")
        fn = [&](RngStream& r) { return grad_upper_dreg(q, tau, cfg.batch_size, K, store, eta, r); };
      else if (e == "dreg_nob")
        fn = [&](RngStream& r) { return grad_upper_dreg(q, tau, cfg.batch_size, K, store, eta, r, DregOptions{true}); };
      else if (e == "iwae_autodiff")
        fn = [&](RngStream& r) {
          return grad_autodiff([&](Scope& s, RngStream& rr) { return lower_objective(s, q, tau, cfg.batch_size, K, rr); },
                               store, r, eta);
        };
      else if (e == "iwae_dreg")
        fn = [&](RngStream& r) { return grad_lower_dreg(q, tau, cfg.batch_size, K, store, eta, r); };
      else
        throw ConfigError("snr: unknown estimator '" + e + "'");
      if (K == 0 && e.rfind("iwae", 0) == 0) continue;
      const SnrReport rep = measure_snr(fn, cfg.replicates, base, cfg.bootstrap);
      sink.add(0, K, 1, e, "snr_mean", rep.mean_snr, std::min(rep.p05, rep.mean_snr), std::max(rep.p95, rep.mean_snr));
      sink.add(0, K, 1, e, "snr_mean_se", rep.mean_snr_se);
      reps.emplace(e, rep);
      sink.say("snr: K=" + std::to_string(K) + " " + e + " mean SNR " + std::to_string(rep.mean_snr));
    }
    // Per-parameter agreement of gradient means. Every estimator sees the same draws for
    // replicate r, so the standard error is that of the paired differences.
    auto zmax = [&](const SnrReport& a, const SnrReport& c) {
      const Matrix d = a.samples - c.samples;
      const double n = static_cast<double>(d.rows());
      double worst = 0.0;
      std::vector<double> col(static_cast<std::size_t>(d.rows()));
      for (Index j = 0; j < d.cols(); ++j) {
        for (Index i = 0; i < d.rows(); ++i) col[static_cast<std::size_t>(i)] = d(i, j);
        const double m = std::abs(stats::mean(col));
        const double se = stats::sample_std(col) / std::sqrt(n);
        if (se > 0.0) worst = std::max(worst, m / se);
        else if (m > 0.0) worst = std::numeric_limits<double>::infinity();
      }
      return worst;
    };
    if (reps.count("autodiff") && reps.count("dreg"))
      sink.add(0, K, 1, "dreg", "grad_agreement_zmax", zmax(reps.at("autodiff"), reps.at("dreg")));
    if (reps.count("dreg") && reps.count("dreg_nob"))
      sink.add(0, K, 1, "dreg_nob", "drop_b_bias_zmax", zmax(reps.at("dreg"), reps.at("dreg_nob")));
    if (reps.count("iwae_autodiff") && reps.count("iwae_dreg"))
      sink.add(0, K, 1, "iwae_dreg", "grad_agreement_zmax", zmax(reps.at("iwae_autodiff"), reps.at("iwae_dreg")));
  }
  return sink.take();
}

// ---- VAE ------------------------------------------------------------------------------

namespace {

struct VaeData {
  Matrix train, val;
};

VaeData load_vae_data(const ExperimentConfig& cfg) {
  const std::string path = (std::filesystem::path(cfg.data_path) / "images-idx3-ubyte").string();
  const Matrix all = load_idx_images(path, cfg.subset_size);
  const Index n_val = std::max<Index>(1, all.rows() / 10);
  return VaeData{all.topRows(all.rows() - n_val), all.bottomRows(n_val)};
}

MiniVaeConfig vae_config(const ExperimentConfig& cfg, Index input_dim) {
  MiniVaeConfig c;
  c.input_dim = input_dim;
  c.hidden.assign(cfg.hidden.begin(), cfg.hidden.end());
  if (c.hidden.empty()) c.hidden = {64, 64};
  c.psi_gate = cfg.psi_gate;
  c.tau_gate = cfg.tau_gate;
  return c;
}

/// IWHVI bound with warm-up weights on the inner (log q(psi) / tau) and outer (prior vs U) terms.
/// Same draws as iwhvi_elbo; equal to it when both weights are 1.
Var weighted_iwhvi(Scope& scope, const MiniVae& vae, const Conditioning& x, Index K, double w_in, double w_out,
                   RngStream& rng) {
  if (w_in == 1.0 && w_out == 1.0)
    return iwhvi_elbo(scope, vae.generative(), *vae.q, *vae.tau, x, BoundConfig{1, K, 1, Variant::IWHVI, 0}, rng).value;
  const Index R = x.rows();
  const Dist qpsi = vae.q->psi_prior(scope, x);
  const Var psi0 = qpsi.draw(rng);
  const Var z = vae.q->z_given_psi(scope, x, psi0).draw(rng);
  const AuxTerms aux = aux_terms(scope, *vae.q, *vae.tau, x, z, psi0, K, rng);
  const Index n = K + 1;
  // log q(z | psi) + w_in (log q(psi) - log tau(psi))
  const Var psi_all = aux.psi_aux.valid() ? concat_rows({psi0, aux.psi_aux}) : psi0;
  const Var lq_psi = reshape(vae.q->psi_prior(scope, x.tiled(n)).log_prob(psi_all), R, n);
  const Var log_w = (aux.log_q - lq_psi) + w_in * (lq_psi - aux.log_tau);
  const Var prior = vae.prior->prior(scope, R).log_prob(z);
  return vae.decoder->log_prob(scope, x, z) + w_out * (prior - logmeanexp_rows(log_w));
}

double vae_batch_bound(const MiniVae& vae, const ParamStore& store, const Matrix& xs, Index M, Index K,
                       Variant variant, RngStream& rng, Index chunk) {
  std::vector<double> values;
  for (Index start = 0; start < xs.rows(); start += chunk) {
    const Index n = std::min(chunk, xs.rows() - start);
    Tape tape;
    Scope scope(tape, store, [](const std::string&) { return false; });
    const Conditioning x = Conditioning::of(tape.constant(xs.middleRows(start, n)));
    const Estimate e = eval_variant(scope, vae.generative(), *vae.q, *vae.tau, x, M, K, variant, rng);
    for (Index i = 0; i < n; ++i) values.push_back(e.value.value()(i, 0));
  }
  return stats::mean(values);
}

}  // namespace

std::vector<CsvRow> run_vae_train(const ExperimentConfig& cfg, const Progress& progress) {
  RowSink sink(cfg, progress);
  const VaeData data = load_vae_data(cfg);
  const MiniVae vae = make_mini_vae(vae_config(cfg, data.train.cols()));
  ParamStore store;
  RngStream init(cfg.seed, 2);
  vae.init(store, init);
  const Estimator est = parse_estimator(cfg.estimator);
  Adam opt(AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8, cfg.amsgrad});
  RngStream fixed_rng(cfg.seed, 3);
  const Matrix fixed = cfg.binarization == "fixed" ? binarize(data.train, fixed_rng) : Matrix();
  RngStream val_rng(cfg.seed, 7);
  const Matrix val = binarize(data.val, val_rng);
  const Index N = data.train.rows();
  const Index B = cfg.batch_size;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int K = cfg.k_at_epoch(epoch);
    opt.set_learning_rate(cfg.lr_at_epoch(epoch));
    const double w_in = warmup_weight(epoch, cfg.warmup_inner);
    const double w_out = warmup_weight(epoch, cfg.warmup_outer);
    std::vector<Index> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), Index{0});
    RngStream shuffle(cfg.seed, 4);
    shuffle = shuffle.split(static_cast<std::uint64_t>(epoch));
    for (Index i = N - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(shuffle.next_u64() % static_cast<std::uint64_t>(i + 1))]);
    RngStream bin_rng = RngStream(cfg.seed, 5).split(static_cast<std::uint64_t>(epoch));
    const Matrix xs = cfg.binarization == "fixed" ? fixed : binarize(data.train, bin_rng);

    std::vector<double> batch_values;
    for (Index start = 0, b = 0; start < N; start += B, ++b) {
      const Index n = std::min(B, N - start);
      Matrix xb(n, xs.cols());
      for (Index i = 0; i < n; ++i) xb.row(i) = xs.row(order[static_cast<std::size_t>(start + i)]);
      RngStream rng = RngStream(cfg.seed, 6).split(static_cast<std::uint64_t>(epoch) * 100000 + static_cast<std::uint64_t>(b));
      RngStream rng_copy = rng;
      auto objective = [&](Scope& s, RngStream& r) {
        const Conditioning x = Conditioning::of(s.tape().constant(xb));
        return -mean(weighted_iwhvi(s, vae, x, K, w_in, w_out, r));
      };
      store.zero_grad();
      if (est == Estimator::IWHVI_DREG) {
        const GradEstimate g = grad_autodiff(objective, store, rng, prefix_filter("tau/", false));
        apply_grads(store, g);
        batch_values.push_back(-g.objective);
        Tape t;
        const GradEstimate d = grad_iwhvi_dreg(vae.generative(), *vae.q, *vae.tau,
                                               Conditioning::of(t.constant(xb)), BoundConfig{1, K, 1, Variant::IWHVI, 0},
                                               store, prefix_filter("tau/", true), rng_copy);
        apply_grads(store, d, -1.0);
      } else {
        const GradEstimate g = grad_autodiff(objective, store, rng);
        apply_grads(store, g);
        batch_values.push_back(-g.objective);
      }
      opt.step(store);
    }
    sink.add(epoch, K, 1, cfg.estimator, "train_bound", stats::mean(batch_values));
    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      RngStream r = RngStream(cfg.seed, 8).split(static_cast<std::uint64_t>(epoch));
      sink.add(epoch, K, 1, cfg.estimator, "val_bound",
               vae_batch_bound(vae, store, val, 1, K, Variant::DIWHVI_EVAL, r, 100));
    }
    sink.say("vae-train epoch " + std::to_string(epoch) + " K=" + std::to_string(K) +
             " train bound " + std::to_string(stats::mean(batch_values)));
  }
  {
    Tape tape;
    Scope scope(tape, store, [](const std::string&) { return false; });
    RngStream r(cfg.seed, 9);
    const double kl =
        expected_kl_tau_prior(scope, *vae.q, *vae.tau, Conditioning::of(tape.constant(val)), 10, r);
    const int K = cfg.k_at_epoch(std::max(0, cfg.epochs - 1));
    sink.add(cfg.epochs, K, 1, cfg.estimator, "expected_kl_tau_prior", kl);
    sink.add(cfg.epochs, K, 1, cfg.estimator, "collapsed", kl < kCollapseThreshold ? 1.0 : 0.0);
  }
  if (!cfg.checkpoint.empty()) store.save(cfg.checkpoint);
  return sink.take();
}

std::vector<CsvRow> run_vae_eval(const ExperimentConfig& cfg, const Progress& progress) {
  RowSink sink(cfg, progress);
  if (cfg.checkpoint.empty()) throw ConfigError("vae-eval needs a checkpoint");
  const VaeData data = load_vae_data(cfg);
  const MiniVae vae = make_mini_vae(vae_config(cfg, data.train.cols()));
  ParamStore store;
  RngStream init(cfg.seed, 2);
  vae.init(store, init);
  store.load(cfg.checkpoint);
  RngStream val_rng(cfg.seed, 7);
  const Matrix all_val = binarize(data.val, val_rng);
  const Matrix val = all_val.topRows(std::min<Index>(cfg.eval_subset, all_val.rows()));

  if (cfg.tau_refit_epochs > 0) {
    // Fit tau alone with q and p frozen, at the largest evaluation K.
    const int K = cfg.k_list.empty() ? cfg.K : *std::max_element(cfg.k_list.begin(), cfg.k_list.end());
    Adam opt(AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8, cfg.amsgrad});
    const Index N = data.train.rows();
    for (int epoch = 0; epoch < cfg.tau_refit_epochs; ++epoch) {
      RngStream bin_rng = RngStream(cfg.seed, 10).split(static_cast<std::uint64_t>(epoch));
      const Matrix xs = binarize(data.train, bin_rng);
      for (Index start = 0, b = 0; start < N; start += cfg.batch_size, ++b) {
        const Index n = std::min<Index>(cfg.batch_size, N - start);
        const Matrix xb = xs.middleRows(start, n);
        RngStream rng = RngStream(cfg.seed, 11).split(static_cast<std::uint64_t>(epoch) * 100000 + static_cast<std::uint64_t>(b));
        const GradEstimate g = grad_autodiff(
            [&](Scope& s, RngStream& r) {
              return -mean(iwhvi_elbo(s, vae.generative(), *vae.q, *vae.tau, Conditioning::of(s.tape().constant(xb)),
                                      BoundConfig{1, K, 1, Variant::IWHVI, 0}, r)
                               .value);
            },
            store, rng, prefix_filter("tau/", true));
        store.zero_grad();
        apply_grads(store, g);
        opt.step(store, names_with_prefix(store, "tau/"));
      }
      sink.say("vae-eval tau refit epoch " + std::to_string(epoch));
    }
  }

  std::vector<std::string> variants = cfg.variants;
  if (variants.empty()) variants = {"DIWHVI_EVAL"};
  std::vector<int> ms = cfg.m_list.empty() ? std::vector<int>{cfg.M} : cfg.m_list;
  std::vector<int> ks = cfg.k_list.empty() ? std::vector<int>{cfg.K} : cfg.k_list;
  for (const auto& vname : variants) {
    const Variant v = parse_variant(vname);
    for (int M : ms)
      for (int K : ks) {
        std::vector<double> runs(static_cast<std::size_t>(cfg.eval_runs));
        parallel_for(cfg.eval_runs, [&](int run) {
          RngStream rng = RngStream(cfg.seed, 12).split(static_cast<std::uint64_t>(run));
          const Index chunk = std::max<Index>(1, 20000 / (static_cast<Index>(M) * (K + 1)));
          runs[static_cast<std::size_t>(run)] = vae_batch_bound(vae, store, val, M, K, v, rng, chunk);
        });
        sink.add_ci(0, K, M, "", variant_name(v), runs);
        sink.add(0, K, M, "", std::string(variant_name(v)) + "_se",
                 runs.size() > 1 ? stats::standard_error(runs) : 0.0);
        sink.say(std::string("vae-eval ") + variant_name(v) + " M=" + std::to_string(M) + " K=" + std::to_string(K) +
                 " mean " + std::to_string(stats::mean(runs)));
      }
  }
  return sink.take();
}

// ---- finite-model studies ---------------------------------------------------------------

std::vector<CsvRow> run_bounds_check(const ExperimentConfig& cfg, const Progress& progress) {
  RowSink sink(cfg, progress);
  RngStream gen(cfg.seed, 1);
  std::vector<oracle::FiniteModel> models;
  std::vector<Matrix> taus;
  for (int i = 0; i < cfg.models; ++i) {
    models.push_back(oracle::random_finite_model(gen));
    taus.push_back(oracle::random_table(models.back().Z(), models.back().S(), gen));
  }
  for (int K : cfg.k_list) {
    int sandwich = 0, monotone = 0;
    double worst_z = 0.0;
    std::vector<double> gaps;
    for (int i = 0; i < cfg.models; ++i) {
      const auto& m = models[static_cast<std::size_t>(i)];
      const Matrix& t = taus[static_cast<std::size_t>(i)];
      for (Index z = 0; z < m.Z(); ++z) {
        const double lq = m.log_marginal(z);
        const double u = oracle::exact_expected_bound(m, t, z, K, oracle::BoundKind::U);
        const double u_next = oracle::exact_expected_bound(m, t, z, K + 1, oracle::BoundKind::U);
        if (u < lq - 1e-10) ++sandwich;
        if (K >= 1 && oracle::exact_expected_bound(m, t, z, K, oracle::BoundKind::L) > lq + 1e-10) ++sandwich;
        if (u_next > u + 1e-10) ++monotone;
        gaps.push_back(u - lq);
      }
      // Monte Carlo U_K from the estimator against the exact expectation at z = 0.
      if (i < 10) {
        const FiniteHvm q(m.psi.transpose(), m.zgp);
        const TableAuxiliary tau("tau", t);
        ParamStore store;
        RngStream init(cfg.seed, 2);
        tau.init(store, init);
        Tape tape;
        Scope scope(tape, store);
        RngStream rng = RngStream(cfg.seed, 3).split(static_cast<std::uint64_t>(i * 100 + K));
        const Var z = tape.constant(Matrix::Zero(cfg.replicates, 1));
        const Estimate e = upper_bound_U(scope, q, tau, Conditioning::none(cfg.replicates), z, K, rng);
        std::vector<double> v(e.value.value().data(), e.value.value().data() + cfg.replicates);
        const double exact = oracle::exact_expected_bound(m, t, 0, K, oracle::BoundKind::U);
        const double se = stats::standard_error(v);
        if (se > 0.0) worst_z = std::max(worst_z, std::abs(stats::mean(v) - exact) / se);
      }
    }
    sink.add(0, K, 1, "", "sandwich_violations", sandwich);
    sink.add(0, K, 1, "", "monotonicity_violations", monotone);
    sink.add(0, K, 1, "", "mean_upper_gap", stats::mean(gaps));
    sink.add(0, K, 1, "", "mc_vs_exact_zmax", worst_z);
    sink.say("bounds-check K=" + std::to_string(K) + " done");
  }
  return sink.take();
}

std::vector<CsvRow> run_jackknife_study(const ExperimentConfig& cfg, const Progress& progress) {
  RowSink sink(cfg, progress);
  RngStream gen(cfg.seed, 1);
  std::vector<oracle::FiniteModel> models;
  std::vector<Matrix> taus;
  for (int i = 0; i < cfg.models; ++i) {
    models.push_back(oracle::random_finite_model(gen));
    taus.push_back(oracle::random_table(models.back().Z(), models.back().S(), gen));
  }
  for (int K : cfg.k_list) {
    if (cfg.J > K) throw ConfigError("jackknife-study: J must not exceed every K");
    std::vector<double> bias_u, bias_j;
    int improved = 0, total = 0;
    for (int i = 0; i < cfg.models; ++i) {
      const auto& m = models[static_cast<std::size_t>(i)];
      const Matrix& t = taus[static_cast<std::size_t>(i)];
      for (Index z = 0; z < m.Z(); ++z) {
        const double lq = m.log_marginal(z);
        const double bu = oracle::exact_expected_bound(m, t, z, K, oracle::BoundKind::U) - lq;
        const double bj = oracle::exact_expected_bound(m, t, z, K, oracle::BoundKind::J, cfg.J) - lq;
        bias_u.push_back(std::abs(bu));
        bias_j.push_back(std::abs(bj));
        improved += std::abs(bj) < std::abs(bu);
        ++total;
      }
    }
    sink.add(0, K, 1, "", "abs_bias_U", stats::mean(bias_u));
    sink.add(0, K, 1, "", "abs_bias_J" + std::to_string(cfg.J), stats::mean(bias_j));
    sink.add(0, K, 1, "", "fraction_improved", static_cast<double>(improved) / total);
    sink.say("jackknife-study K=" + std::to_string(K) + " done");
  }
  return sink.take();
}

std::vector<CsvRow> run_experiment(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  const std::string& e = cfg.experiment;
  if (e == "toy-laplace") return run_toy_laplace(cfg, progress);
  if (e == "snr") return run_snr(cfg, progress);
  if (e == "vae-train") return run_vae_train(cfg, progress);
  if (e == "vae-eval") return run_vae_eval(cfg, progress);
  if (e == "bounds-check") return run_bounds_check(cfg, progress);
  if (e == "jackknife-study") return run_jackknife_study(cfg, progress);
  throw ConfigError("unknown experiment '" + e + "'");
}

}  // namespace hvi
