#include "suites.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "fdy/errors.hpp"
#include "fdy/fdy_conv.hpp"
#include "fdy/gradcheck.hpp"
#include "fdy/postproc.hpp"
#include "oracles.hpp"

namespace fdy::verify {

namespace {

using V = Var<double>;
using T = Tensor4<double>;

T random_tensor(Shape4 shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  T t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

std::vector<double> as_vector(const T& t) { return std::vector<double>(t.data(), t.data() + t.size()); }

V constant(const T& t) { return V::constant(t); }

MDFDLayerConfig layer(Index c_in, Index c_out, std::vector<BranchSpec> branches) {
  MDFDLayerConfig cfg;
  cfg.in_channels = c_in;
  cfg.out_channels = c_out;
  cfg.branches = std::move(branches);
  return cfg;
}

BranchSpec branch(Rational p, std::vector<int> dilated = {}, int k = 4) {
  BranchSpec b;
  b.proportion = p;
  b.dilation.dilated_sizes = std::move(dilated);
  b.dilation.n_kernels = k;
  return b;
}

/// Tracks the worst value of a check over seeds.
struct Worst {
  std::string name;
  double tol;
  double worst = 0.0;
  int runs = 0;
  void add(double v) {
    worst = std::isnan(v) ? v : std::max(worst, v);
    ++runs;
  }
  CheckResult result(const std::string& what) const {
    return CheckResult{name, worst, tol, !std::isnan(worst) && worst <= tol, what + " over " + std::to_string(runs) + " runs"};
  }
};

}  // namespace

bool SuiteReport::passed() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

std::string SuiteReport::text() const {
  std::ostringstream os;
  char buf[256];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, "%s\t%s\t%s\tvalue=%.3e\ttol=%.1e\t%s\n", c.pass ? "PASS" : "FAIL", suite.c_str(),
                  c.name.c_str(), c.value, c.tolerance, c.detail.c_str());
    os << buf;
  }
  return os.str();
}

SuiteReport equivalence_suite(int seeds) {
  SuiteReport r{"equivalence", {}};
  Worst pfd{"PFD(8/8) == FDY", 1e-10}, k1{"K=1 == plain conv", 1e-10}, same{"identical basis kernels == plain conv", 1e-10},
      stat{"static-only MDFD == plain conv", 1e-10}, assembled{"FDY branch == per-frequency kernel assembly", 1e-10},
      parts{"MDFD == concat(branches, static)", 1e-10};
  for (int s = 0; s < seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const T x = random_tensor(Shape4{2, 4, 5, 8}, seed);
    {
      Rng rng(seed);
      ParameterStore<double> store;
      const MDFDConv<double> conv(validate_config(layer(4, 8, {branch({1, 1})}), 8), store, "l", rng);
      const auto& br = conv.branches().front();
      const V fdy = fdy_branch_forward<double>(constant(x), br.kernels, br.dilations, br.bias, br.head.forward(constant(x), false));
      pfd.add(max_abs_diff(mdfd_forward(conv, constant(x), false).value(), fdy.value()));
    }
    {
      Rng rng(seed);
      ParameterStore<double> store;
      MDFDConv<double> conv(validate_config(layer(4, 8, {branch({1, 1}, {}, 1)}), 8), store, "l", rng);
      auto& br = const_cast<DynamicBranch<double>&>(conv.branches().front());
      br.bias.mutable_value() = random_tensor(Shape4{1, 1, 1, 8}, seed + 9);
      const T ref = oracle::conv2d_same<double>(x, br.kernels[0].value(), as_vector(br.bias.value()), 1, 1);
      k1.add(max_abs_diff(mdfd_forward(conv, constant(x), true).value(), ref));
    }
    {
      Rng rng(seed);
      ParameterStore<double> store;
      MDFDConv<double> conv(validate_config(layer(4, 8, {branch({1, 1})}), 8), store, "l", rng);
      auto& br = const_cast<DynamicBranch<double>&>(conv.branches().front());
      for (auto& k : br.kernels) k.mutable_value() = br.kernels[0].value();
      br.head.conv2.mutable_value() = random_tensor(br.head.conv2.shape(), seed + 5, 10.0);
      const T ref = oracle::conv2d_same<double>(x, br.kernels[0].value(), {}, 1, 1);
      same.add(max_abs_diff(mdfd_forward(conv, constant(x), true).value(), ref));
    }
    {
      Rng rng(seed);
      ParameterStore<double> store;
      MDFDConv<double> conv(validate_config(layer(4, 8, {}), 8), store, "l", rng);
      const_cast<V&>(conv.static_bias()).mutable_value() = random_tensor(Shape4{1, 1, 1, 8}, seed + 3);
      const T ref = oracle::conv2d_same<double>(x, conv.static_kernel().value(), as_vector(conv.static_bias().value()), 1, 1);
      stat.add(max_abs_diff(mdfd_forward(conv, constant(x), true).value(), ref));
    }
    {
      const T xb = random_tensor(Shape4{2, 3, 5, 7}, seed + 40);
      const T bias = random_tensor(Shape4{1, 1, 1, 2}, seed + 41);
      std::vector<T> ws;
      std::vector<V> wv;
      for (int k = 0; k < 4; ++k) {
        ws.push_back(random_tensor(Shape4{2, 3, 3, 3}, seed * 10 + 100 + static_cast<std::uint64_t>(k)));
        wv.push_back(constant(ws.back()));
      }
      const T attn = softmax(constant(random_tensor(Shape4{2, 4, 1, 7}, seed + 42, 2.0)), 1, 1.0).value();
      for (const std::vector<int>& dil : {std::vector<int>{1, 1, 1, 1}, {1, 1, 2, 3}}) {
        const V y = fdy_branch_forward<double>(constant(xb), wv, dil, constant(bias), constant(attn));
        assembled.add(max_abs_diff(y.value(), oracle::fdy_assembled<double>(xb, ws, dil, as_vector(bias), attn)));
      }
    }
    {
      Rng rng(seed);
      ParameterStore<double> store;
      MDFDConv<double> conv(validate_config(layer(4, 8, {branch({1, 4}), branch({1, 4}, {2, 3}), branch({1, 8}, {3})}), 8),
                            store, "l", rng);
      std::vector<V> pieces;
      for (const auto& br : conv.branches())
        pieces.push_back(fdy_branch_forward<double>(constant(x), br.kernels, br.dilations, br.bias, br.head.forward(constant(x), false)));
      pieces.push_back(conv2d(constant(x), conv.static_kernel(), conv.static_bias()));
      parts.add(max_abs_diff(mdfd_forward(conv, constant(x), false).value(), concat(pieces, 1).value()));
    }
  }
  for (const Worst* w : {&pfd, &k1, &same, &stat, &assembled, &parts}) r.checks.push_back(w->result("max abs diff"));
  return r;
}

SuiteReport gradcheck_suite(int seeds) {
  SuiteReport r{"gradcheck", {}};
  const double step = 1e-5, tol = 1e-4;
  std::vector<Worst> checks;
  auto slot = [&](const std::string& name) -> Worst& {
    for (auto& w : checks)
      if (w.name == name) return w;
    checks.push_back(Worst{name, tol});
    return checks.back();
  };
  using Fn = std::function<V(const std::vector<V>&)>;
  for (int s = 0; s < seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    auto run = [&](const std::string& name, const std::function<V(const std::vector<V>&)>& f, const std::vector<T>& pts) {
      const Fn wrapped = [&](const std::vector<V>& v) {
        const V y = f(v);
        return y.shape().size() == 1 ? y : weighted_sum(y, random_tensor(y.shape(), seed + 5000));
      };
      slot(name).add(finite_diff_check<double>(wrapped, pts, step).max_rel_error);
    };
    const T x = random_tensor(Shape4{2, 3, 4, 6}, seed);
    const T y = random_tensor(Shape4{2, 3, 4, 6}, seed + 1);
    run("add", [](const std::vector<V>& v) { return add(v[0], v[1]); }, {x, y});
    run("sub", [](const std::vector<V>& v) { return sub(v[0], v[1]); }, {x, y});
    run("mul", [](const std::vector<V>& v) { return mul(v[0], v[1]); }, {x, y});
    run("scale", [](const std::vector<V>& v) { return scale(v[0], 2.5); }, {x});
    run("relu", [](const std::vector<V>& v) { return relu(v[0]); }, {x});
    run("sigmoid", [](const std::vector<V>& v) { return sigmoid(v[0]); }, {x});
    run("tanh", [](const std::vector<V>& v) { return tanh(v[0]); }, {x});
    run("softmax", [](const std::vector<V>& v) { return softmax(v[0], 1, 2.0); }, {x});
    run("avg_pool2d", [](const std::vector<V>& v) { return avg_pool2d(v[0], 2, 3); }, {x});
    run("mean_axis", [](const std::vector<V>& v) { return mean_axis(v[0], 2); }, {x});
    run("sum_axis", [](const std::vector<V>& v) { return sum_axis(v[0], 3); }, {x});
    run("slice", [](const std::vector<V>& v) { return slice(v[0], 1, 1, 2); }, {x});
    run("concat", [](const std::vector<V>& v) { return concat<double>({v[0], v[1]}, 1); }, {x, y});
    run("permute", [](const std::vector<V>& v) { return permute(v[0], {0, 3, 2, 1}); }, {x});
    run("repeat_axis", [](const std::vector<V>& v) { return repeat_axis(v[0], 2, 3); }, {x});
    run("mul_broadcast", [](const std::vector<V>& v) { return mul_broadcast(v[0], v[1]); }, {x, random_tensor(Shape4{2, 1, 1, 6}, seed + 2)});
    run("add_channel_bias", [](const std::vector<V>& v) { return add_channel_bias(v[0], v[1]); }, {x, random_tensor(Shape4{1, 1, 1, 3}, seed + 3)});
    const T w = random_tensor(Shape4{4, 3, 3, 3}, seed + 4, 0.5);
    const T wb = random_tensor(Shape4{1, 1, 1, 4}, seed + 5);
    for (Index d : {1, 2}) {
      Conv2dOptions opt;
      opt.dilation = {1, d};
      run("conv2d dilation " + std::to_string(d), [opt](const std::vector<V>& v) { return conv2d(v[0], v[1], v[2], opt); }, {x, w, wb});
    }
    const T gamma = random_tensor(Shape4{1, 1, 1, 3}, seed + 6), beta = random_tensor(Shape4{1, 1, 1, 3}, seed + 7);
    for (bool train : {true, false}) {
      BatchNormState st(3);
      st.running_mean = Eigen::ArrayXd::Constant(3, 0.2);
      st.running_var = Eigen::ArrayXd::Constant(3, 1.5);
      run(train ? "batch_norm train" : "batch_norm eval",
          [&st, train](const std::vector<V>& v) { return batch_norm(v[0], v[1], v[2], st, train); }, {x, gamma, beta});
    }
    run("context_gate", [](const std::vector<V>& v) { return context_gate(v[0], v[1], v[2]); },
        {x, random_tensor(Shape4{3, 3, 1, 1}, seed + 8), random_tensor(Shape4{1, 1, 1, 3}, seed + 3)});
    const T seq = random_tensor(Shape4{2, 1, 5, 4}, seed + 9);
    run("linear", [](const std::vector<V>& v) { return linear(v[0], v[1], v[2]); },
        {seq, random_tensor(Shape4{1, 1, 3, 4}, seed + 10), random_tensor(Shape4{1, 1, 1, 3}, seed + 11)});
    const Index H = 3;
    const std::vector<T> gru_pts{seq, random_tensor(Shape4{1, 1, 3 * H, 4}, seed + 12, 0.6),
                                 random_tensor(Shape4{1, 1, 3 * H, H}, seed + 13, 0.6),
                                 random_tensor(Shape4{1, 1, 1, 3 * H}, seed + 14, 0.3),
                                 random_tensor(Shape4{1, 1, 1, 3 * H}, seed + 15, 0.3)};
    for (bool rev : {false, true})
      run(rev ? "gru reverse" : "gru forward", [rev](const std::vector<V>& v) { return gru(v[0], v[1], v[2], v[3], v[4], rev); }, gru_pts);
    Rng prng(seed);
    T probs(Shape4{2, 3, 4, 1}), target(Shape4{2, 3, 4, 1});
    for (Index i = 0; i < probs.size(); ++i) {
      probs[i] = prng.uniform(0.05, 0.95);
      target[i] = prng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    run("binary_cross_entropy", [&target](const std::vector<V>& v) { return binary_cross_entropy(v[0], target); }, {probs});

    Rng rng(seed);
    ParameterStore<double> store;
    const MDFDConv<double> conv(validate_config(layer(3, 8, {branch({1, 4}), branch({1, 2}, {2, 3})}), 6), store, "l", rng);
    V xv = V::leaf(random_tensor(Shape4{2, 3, 4, 6}, seed + 1), true);
    std::vector<V> leaves{xv};
    for (const auto& p : store.params()) {
      V v = p.var;
      v.mutable_value().array() += random_tensor(v.shape(), seed + 7 + leaves.size(), 0.2).array();
      leaves.push_back(v);
    }
    const T proj = random_tensor(Shape4{2, 8, 4, 6}, seed + 99);
    for (bool train : {true, false})
      slot(train ? "MDFD (1)+(2,3) layer train" : "MDFD (1)+(2,3) layer eval")
          .add(finite_diff_check_inplace<double>([&] { return weighted_sum(conv.forward(xv, train), proj); }, leaves, step).max_rel_error);
  }
  for (const auto& w : checks) r.checks.push_back(w.result("max rel err, step 1e-5"));
  return r;
}

namespace {

Event micro_event(Rng& rng, int n_clips) {
  Event e;
  e.file = "f" + std::to_string(rng.uniform_int(0, n_clips - 1));
  e.cls = static_cast<int>(rng.uniform_int(0, 1));
  e.onset = std::round(rng.uniform(0.0, 8.0) * 100) / 100;
  e.offset = e.onset + 0.1 + std::round(rng.uniform(0.0, 2.0) * 100) / 100;
  return e;
}

std::vector<oracle::MicroEvent> micro(const EventList& l) {
  std::vector<oracle::MicroEvent> out;
  for (const auto& e : l) out.push_back({e.file, e.cls, e.onset, e.offset});
  return out;
}

}  // namespace

SuiteReport psds_suite(int datasets) {
  SuiteReport r{"psds", {}};
  EvalConfig eval;
  const PsdsParams params = PsdsParams::from(eval);
  const EventList gt{{"a", 0, 1.0, 2.0}, {"b", 1, 3.0, 5.0}, {"b", 0, 6.0, 6.5}};
  const double hours = 20.0 / 3600.0;
  const double perfect = psds1_from_detections(std::vector<EventList>(params.thresholds.size(), gt), gt, 2, hours, params).psds1;
  const double empty = psds1_from_detections(std::vector<EventList>(params.thresholds.size()), gt, 2, hours, params).psds1;
  r.checks.push_back({"perfect detections", std::abs(perfect - 1.0), 0.0, perfect == 1.0, "psds1=" + format_number(perfect)});
  r.checks.push_back({"empty detections", std::abs(empty), 0.0, empty == 0.0, "psds1=" + format_number(empty)});

  Worst agree{"direct-definition oracle agreement", 1e-9};
  Worst range{"psds1 outside [0,1]", 0.0};
  for (int d = 0; d < datasets; ++d) {
    Rng rng(static_cast<std::uint64_t>(d) + 77);
    const int n_clips = static_cast<int>(rng.uniform_int(1, 5));
    const int n_thr = static_cast<int>(rng.uniform_int(1, 8));
    EvalConfig ec;
    ec.n_thresholds = n_thr;
    const PsdsParams p = PsdsParams::from(ec);
    EventList truth;
    const int n_gt = static_cast<int>(rng.uniform_int(1, 4));
    for (int i = 0; i < n_gt; ++i) truth.push_back(micro_event(rng, n_clips));
    std::vector<EventList> dets(static_cast<std::size_t>(n_thr));
    std::vector<std::vector<oracle::MicroEvent>> odets;
    for (auto& dl : dets) {
      for (const auto& g : truth)
        if (rng.uniform() < 0.6) {
          Event e = g;
          e.onset = std::max(0.0, g.onset + rng.uniform(-0.4, 0.4));
          e.offset = std::max(e.onset + 0.05, g.offset + rng.uniform(-0.4, 0.4));
          dl.push_back(e);
        }
      const int spurious = static_cast<int>(rng.uniform_int(0, 2));
      for (int i = 0; i < spurious; ++i) dl.push_back(micro_event(rng, n_clips));
      odets.push_back(micro(dl));
    }
    const double h = n_clips * 10.0 / 3600.0;
    const double ours = psds1_from_detections(dets, truth, 2, h, p).psds1;
    const double ref = oracle::psds_reference(odets, micro(truth), 2, h, p.dtc, p.gtc, p.alpha_st, p.e_max);
    agree.add(std::abs(ours - ref));
    range.add(ours < 0 ? -ours : (ours > 1 ? ours - 1 : 0.0));
  }
  r.checks.push_back(agree.result("max abs diff (<= 5 clips, <= 4 events)"));
  r.checks.push_back(range.result("max excursion"));
  return r;
}

SuiteReport median_suite() {
  SuiteReport r{"median", {}};
  const int n = 12, width = 7, half = width / 2;
  int mismatches = 0, survivors = 0, isolated = 0;
  for (int bits = 0; bits < (1 << n); ++bits) {
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = (bits >> i) & 1;
    const auto ours = median_filter_1d(x, width);
    if (ours != oracle::median_filter_1d(x, width)) ++mismatches;
    auto at = [&](int i) { return x[static_cast<std::size_t>(std::clamp(i, 0, n - 1))]; };
    for (int a = 0; a < n;) {
      int b = a;
      while (b < n && x[static_cast<std::size_t>(b)] == x[static_cast<std::size_t>(a)]) ++b;
      const int len = b - a;
      const double other = 1.0 - x[static_cast<std::size_t>(a)];
      bool surrounded = len <= 3;
      for (int k = 1; k <= half && surrounded; ++k) surrounded = at(a - k) == other && at(b - 1 + k) == other;
      if (surrounded) {
        ++isolated;
        for (int i = a; i < b; ++i)
          if (ours[static_cast<std::size_t>(i)] != other) ++survivors;
      }
      a = b;
    }
  }
  r.checks.push_back({"width 7 matches sliding-window oracle", static_cast<double>(mismatches), 0.0, mismatches == 0,
                      "mismatching signals among 4096 of length 12"});
  r.checks.push_back({"isolated spikes/gaps of <= 3 frames removed", static_cast<double>(survivors), 0.0, survivors == 0,
                      "surviving frames across " + std::to_string(isolated) + " isolated runs; 7 frames at 64 ms = 448 ms"});
  return r;
}

std::vector<std::string> suite_names() { return {"equivalence", "gradcheck", "psds", "median", "all"}; }

std::vector<SuiteReport> run_suites(const std::string& name) {
  if (name == "equivalence") return {equivalence_suite()};
  if (name == "gradcheck") return {gradcheck_suite()};
  if (name == "psds") return {psds_suite()};
  if (name == "median") return {median_suite()};
  if (name == "all") return {equivalence_suite(), gradcheck_suite(), psds_suite(), median_suite()};
  throw ConfigError("unknown suite '" + name + "'; valid suites: equivalence, gradcheck, psds, median, all");
}

}  // namespace fdy::verify
