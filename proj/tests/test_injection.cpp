#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "sinktrack/error.hpp"
#include "sinktrack/info_source.hpp"
#include "sinktrack/injection.hpp"
#include "sinktrack/toy_model.hpp"

using namespace sinktrack;

namespace {

PlanViolation violation_of(const InjectionPlan& plan, const ModelConfig& cfg) {
  try {
    validate_plan(plan, cfg);
  } catch (const PlanValidationError& e) {
    return e.violation();
  }
  FAIL("plan unexpectedly valid");
  return PlanViolation::not_scheduled;
}

InjectionPlan sinktrack_plan(LayerSchedule s = LayerSchedule::every(5), SourceForm form = SourceForm::full) {
  InjectionPlan p;
  p.mode = InjectionMode::sinktrack;
  p.schedule = std::move(s);
  p.source_form = form;
  return p;
}

InjectionPlan soft_plan(StrengthSchedule st, LayerSchedule s = LayerSchedule::every(5)) {
  InjectionPlan p;
  p.mode = InjectionMode::soft;
  p.schedule = std::move(s);
  p.strength = st;
  return p;
}

Tensor identity(std::size_t d) {
  Tensor t({d, d});
  for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0f;
  return t;
}

}  // namespace

TEST_CASE("validate_plan resolves schedules") {
  auto cfg = canonical_config();
  cfg.n_layers = 12;
  auto v = validate_plan(sinktrack_plan(), cfg);
  CHECK(v.layers() == std::vector<std::size_t>{0, 5, 10});
  CHECK(validate_plan(sinktrack_plan(LayerSchedule::all()), cfg).layers().size() == 12);
  CHECK(validate_plan(sinktrack_plan(LayerSchedule::every(4, 3)), cfg).layers() == std::vector<std::size_t>{3, 7, 11});
  CHECK(validate_plan(sinktrack_plan(LayerSchedule::explicit_list({1, 2, 9})), cfg).layers() ==
        std::vector<std::size_t>{1, 2, 9});
  CHECK(validate_plan(InjectionPlan{}, cfg).layers().empty());

  // every_k(k, offset) == {offset, offset+k, ...} ∩ [0, L)
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t L = 1 + rng() % 30, k = 1 + rng() % 7, off = rng() % L;
    cfg.n_layers = L;
    const auto got = validate_plan(sinktrack_plan(LayerSchedule::every(k, off)), cfg).layers();
    std::vector<std::size_t> want;
    for (std::size_t l = 0; l < L; ++l)
      if (l >= off && (l - off) % k == 0) want.push_back(l);
    CHECK(got == want);
  }
}

TEST_CASE("validate_plan reports each violation distinctly") {
  auto cfg = canonical_config();
  cfg.n_layers = 12;
  CHECK(violation_of(soft_plan(StrengthSchedule::constant(1.2f)), cfg) == PlanViolation::strength_out_of_range);
  auto st = sinktrack_plan();
  st.strength = StrengthSchedule::constant(0.5f);
  CHECK(violation_of(st, cfg) == PlanViolation::strength_not_allowed);
  CHECK(violation_of(sinktrack_plan(LayerSchedule::explicit_list({3, 12})), cfg) == PlanViolation::layer_out_of_range);
  CHECK(violation_of(sinktrack_plan(LayerSchedule::explicit_list({4, 2})), cfg) == PlanViolation::unsorted_layers);
  CHECK(violation_of(sinktrack_plan(LayerSchedule::explicit_list({2, 2})), cfg) == PlanViolation::unsorted_layers);
  CHECK(violation_of(sinktrack_plan(LayerSchedule::explicit_list({})), cfg) == PlanViolation::empty_schedule);
  CHECK(violation_of(sinktrack_plan(LayerSchedule::every(0)), cfg) == PlanViolation::bad_interval);
  CHECK(violation_of(sinktrack_plan(LayerSchedule::every(2, 12)), cfg) == PlanViolation::layer_out_of_range);
  InjectionPlan soft_missing;
  soft_missing.mode = InjectionMode::soft;
  CHECK(violation_of(soft_missing, cfg) == PlanViolation::missing_strength);
  CHECK(violation_of(soft_plan(StrengthSchedule::decaying(0.8f, 0.2f)), cfg) == PlanViolation::strength_order);
  CHECK(violation_of(soft_plan(StrengthSchedule::increasing(0.2f, 0.8f)), cfg) == PlanViolation::strength_order);
  InjectionPlan hard_full;
  hard_full.mode = InjectionMode::hard;
  hard_full.source_form = SourceForm::full;
  CHECK(violation_of(hard_full, cfg) == PlanViolation::full_source_not_allowed);
}

TEST_CASE("strength schedules interpolate linearly over scheduled layers") {
  auto cfg = canonical_config();
  cfg.n_layers = 16;
  auto v = validate_plan(soft_plan(StrengthSchedule::decaying(0.2f, 0.8f)), cfg);  // layers 0,5,10,15
  REQUIRE(v.alphas().size() == 4);
  CHECK(v.alpha_at(0) == doctest::Approx(0.2));
  CHECK(v.alpha_at(5) == doctest::Approx(0.4));
  CHECK(v.alpha_at(10) == doctest::Approx(0.6));
  CHECK(v.alpha_at(15) == doctest::Approx(0.8));
  CHECK_THROWS_AS(v.alpha_at(3), PlanValidationError);
  auto c = validate_plan(soft_plan(StrengthSchedule::constant(0.3f)), cfg);
  for (float a : c.alphas()) CHECK(a == 0.3f);
}

TEST_CASE("hard_inject overwrites BOS values and leaves keys") {
  const auto model = testutil::canonical_model();
  const std::vector<TokenId> prompt{0, 7, 3, 9};
  auto pre = prefill(model, prompt);
  std::mt19937_64 rng(3);
  auto f = testutil::random_tensor({32}, rng);
  std::vector<std::vector<float>> keys;
  for (std::size_t p = 0; p < prompt.size(); ++p) keys.push_back(pre.cache.key_row(2, p));
  auto v1 = pre.cache.value_row(2, 1);
  hard_inject(pre.cache, 2, f);
  CHECK(pre.cache.value_row(2, 0) == f.values());
  CHECK(pre.cache.value_row(2, 1) == v1);
  for (std::size_t p = 0; p < prompt.size(); ++p) CHECK(pre.cache.key_row(2, p) == keys[p]);
  CHECK_THROWS_AS(hard_inject(pre.cache, 2, Tensor({31})), DimensionError);
}

TEST_CASE("hard injection changes subsequent decode logits") {
  const auto model = testutil::canonical_model();
  const std::vector<TokenId> prompt{0, 7, 3, 9, 12};
  InjectionPlan hard;
  hard.mode = InjectionMode::hard;
  hard.schedule = LayerSchedule::all();
  const auto vh = validate_plan(hard, model.config);
  const auto vn = validate_plan(InjectionPlan{}, model.config);
  const auto info = InfoSource::from_prompt(prompt, model, SourceForm::pooled);
  GenerationFlags flags;
  flags.keep_logits = true;
  auto a = generate(model, prompt, vh, &info, 3, flags);
  auto b = generate(model, prompt, vn, nullptr, 3, flags);
  // prefill output is unaffected (injection lands after the prompt attended)
  CHECK(a.logits[0] == b.logits[0]);
  CHECK(a.logits[1] != b.logits[1]);
}

TEST_CASE("soft_inject arithmetic") {
  auto h = Tensor::vector({2, 0});
  auto f = Tensor::vector({0, 2});
  CHECK(soft_inject(h, f, 1.0f) == h);
  CHECK(soft_inject(h, f, 0.0f) == f);
  CHECK(soft_inject(h, f, 0.5f) == Tensor::vector({1, 1}));
  CHECK_THROWS_AS(soft_inject(h, Tensor::vector({1, 2, 3}), 0.5f), DimensionError);
}

TEST_CASE("soft_inject is convex and monotone in strength") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  for (int trial = 0; trial < 200; ++trial) {
    auto h = testutil::random_tensor({16}, rng, 3.0f);
    auto f = testutil::random_tensor({16}, rng, 3.0f);
    float a1 = unit(rng), a2 = unit(rng);
    if (a1 > a2) std::swap(a1, a2);
    auto s1 = soft_inject(h, f, a1);
    auto s2 = soft_inject(h, f, a2);
    for (std::size_t i = 0; i < 16; ++i) {
      const float lo = std::min(h[i], f[i]), hi = std::max(h[i], f[i]);
      CHECK(s1[i] >= lo);
      CHECK(s1[i] <= hi);
    }
    double d1 = 0, d2 = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      d1 += std::fabs(s1[i] - h[i]);
      d2 += std::fabs(s2[i] - h[i]);
    }
    if (a1 < a2) CHECK(d1 >= d2 - 1e-5);
  }
}

TEST_CASE("cross_attend_bos with a single info row ignores the query") {
  const auto model = testutil::canonical_model();
  const auto& lw = model.layer(1);
  std::mt19937_64 rng(4);
  auto f = testutil::random_tensor({1, 32}, rng);
  auto expected = matmul(matmul(f, lw.wv), lw.wo);
  for (int trial = 0; trial < 5; ++trial) {
    auto h0 = testutil::random_tensor({32}, rng, 5.0f);
    auto out = cross_attend_bos(h0, f, lw, 4);
    for (std::size_t j = 0; j < 32; ++j) CHECK(out[j] == doctest::Approx(expected[j]).epsilon(1e-6));
  }

  LayerWeights id = lw;
  id.wq = id.wk = id.wv = id.wo = identity(32);
  auto h0 = testutil::random_tensor({32}, rng);
  CHECK(cross_attend_bos(h0, f, id, 4).values() == f.values());

  CHECK_THROWS_AS(cross_attend_bos(h0, Tensor(), lw, 4), InputError);
}

TEST_CASE("cross attention over identical rows equals the pooled case") {
  const auto model = testutil::canonical_model();
  std::mt19937_64 rng(5);
  for (std::size_t layer = 0; layer < 4; ++layer) {
    auto row = testutil::random_tensor({32}, rng);
    Tensor three({3, 32});
    for (std::size_t i = 0; i < 3; ++i) std::copy_n(row.data().begin(), 32, three.row(i).begin());
    auto h0 = testutil::random_tensor({32}, rng, 2.0f);
    auto a = cross_attend_bos(h0, three, model.layer(layer), 4);
    auto b = cross_attend_bos(h0, Tensor::matrix(1, 32, row.values()), model.layer(layer), 4);
    for (std::size_t j = 0; j < 32; ++j) CHECK(std::fabs(a[j] - b[j]) <= 1e-6);
  }
}

TEST_CASE("dual-track: regular rows are bit-identical to standard attention") {
  std::mt19937_64 rng(6);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto model = make_toy_model(testutil::small_config(3, 16, 4, 20), seed);
    const auto plan = validate_plan(sinktrack_plan(LayerSchedule::all()), model.config);
    const auto prompt = testutil::random_prompt(2 + rng() % 10, 20, rng);
    const auto info = InfoSource::from_prompt(prompt, model, SourceForm::full);
    const auto h = embed(prompt, model);
    for (std::size_t l = 0; l < 3; ++l) {
      KVCache c1(model.config), c2(model.config);
      auto dual = dual_track_attention(h, model, l, plan, info, c1);
      auto plain = causal_self_attention(h, model, l, c2);
      for (std::size_t i = 1; i < h.rows(); ++i)
        CHECK(std::equal(dual.row(i).begin(), dual.row(i).end(), plain.row(i).begin()));
      CHECK(!std::equal(dual.row(0).begin(), dual.row(0).end(), plain.row(0).begin()));
      // cache holds the unmodified projections
      CHECK(c1.value_row(l, 0) == c2.value_row(l, 0));
      CHECK(c1.key_row(l, 0) == c2.key_row(l, 0));
    }
  }
}

TEST_CASE("dual-track on BOS alone is pure cross-attention") {
  const auto model = testutil::canonical_model();
  const auto plan = validate_plan(sinktrack_plan(), model.config);
  std::mt19937_64 rng(2);
  const auto info = InfoSource::from_external(testutil::random_tensor({5, 32}, rng), SourceForm::full, 32);
  const std::vector<TokenId> bos{0};
  auto h = embed(bos, model);
  KVCache cache(model.config);
  auto out = dual_track_attention(h, model, 0, plan, info, cache);
  auto expected = cross_attend_bos(Tensor::vector(h.values()), info.rows(), model.layer(0), 4);
  CHECK(out.values() == expected.values());
}

TEST_CASE("dual-track matches a hand-rolled two-track oracle") {
  auto cfg = testutil::small_config(1, 8, 2, 16);
  auto model = make_toy_model(cfg, 77);
  auto& lw = model.weights.layers[0];
  lw.wq = lw.wk = lw.wv = lw.wo = identity(8);
  for (float& v : model.weights.embedding.data()) v *= 40.0f;
  const auto plan = validate_plan(sinktrack_plan(LayerSchedule::all()), cfg);
  std::mt19937_64 rng(9);
  auto info_rows = testutil::random_tensor({2, 8}, rng, 2.0f);
  const auto info = InfoSource::from_external(info_rows, SourceForm::full, 8);
  const std::vector<TokenId> toks{0, 4, 11};
  auto h = embed(toks, model);
  KVCache cache(cfg);
  auto out = dual_track_attention(h, model, 0, plan, info, cache);

  const auto hm = oracle::to_mat(h);
  const auto im = oracle::to_mat(info_rows);
  const auto track2 = oracle::dense_causal_attention(hm, hm, hm, 2);
  const auto track1 = oracle::dense_cross_attention(hm[0], im, im, 2);
  CHECK(testutil::max_abs_diff(track1, out.row(0)) <= 1e-6);
  for (std::size_t i = 1; i < 3; ++i) CHECK(testutil::max_abs_diff(track2.heads[i], out.row(i)) <= 1e-6);
}

TEST_CASE("dual-track refuses unscheduled layers") {
  auto cfg = canonical_config();
  const auto model = make_toy_model(cfg, 1);
  const auto plan = validate_plan(sinktrack_plan(LayerSchedule::explicit_list({2})), cfg);
  const std::vector<TokenId> toks{0, 1};
  const auto info = InfoSource::from_prompt(toks, model, SourceForm::full);
  KVCache cache(cfg);
  CHECK_THROWS_AS(dual_track_attention(embed(toks, model), model, 1, plan, info, cache), PlanValidationError);
}

TEST_CASE("apply_plan_at_layer: none and soft(α=1) are the standard block") {
  const auto model = testutil::canonical_model();
  std::mt19937_64 rng(12);
  const auto prompt = testutil::random_prompt(7, 64, rng);
  const auto info = InfoSource::from_prompt(prompt, model, SourceForm::pooled);
  const auto none = validate_plan(InjectionPlan{}, model.config);
  const auto soft1 = validate_plan(soft_plan(StrengthSchedule::constant(1.0f), LayerSchedule::all()), model.config);
  auto h = embed(prompt, model);
  KVCache c0(model.config), c1(model.config), c2(model.config);
  for (std::size_t l = 0; l < 4; ++l) {
    auto ref = decoder_block(h, model, l, c0);
    CHECK(apply_plan_at_layer(h, model, l, none, nullptr, c1) == ref);
    CHECK(apply_plan_at_layer(h, model, l, soft1, &info, c2) == ref);
    h = ref;
  }
  CHECK(c0 == c1);
  CHECK(c0 == c2);
}

TEST_CASE("sinktrack every 5 layers modifies BOS exactly at layers 0, 5, 10") {
  auto cfg = testutil::small_config(12, 16, 4, 32);
  const auto model = make_toy_model(cfg, 21);
  const auto plan = validate_plan(sinktrack_plan(), cfg);
  const auto none = validate_plan(InjectionPlan{}, cfg);
  std::mt19937_64 rng(13);
  const auto prompt = testutil::random_prompt(9, 32, rng);
  const auto info = InfoSource::from_prompt(prompt, model, SourceForm::full);
  auto h = embed(prompt, model);
  KVCache cs(cfg), cn(cfg);
  for (std::size_t l = 0; l < 12; ++l) {
    KVCache scratch = cn;
    auto injected = apply_plan_at_layer(h, model, l, plan, &info, cs);
    auto baseline = apply_plan_at_layer(h, model, l, none, nullptr, scratch);
    const bool bos_same = std::equal(injected.row(0).begin(), injected.row(0).end(), baseline.row(0).begin());
    CHECK_MESSAGE(bos_same == (l % 5 != 0), "layer " << l);
    for (std::size_t i = 1; i < h.rows(); ++i)
      CHECK(std::equal(injected.row(i).begin(), injected.row(i).end(), baseline.row(i).begin()));
    cn = scratch;
    h = injected;
  }
}

TEST_CASE("prefill postconditions per mode") {
  const auto model = testutil::canonical_model();
  std::mt19937_64 rng(14);
  const auto prompt = testutil::random_prompt(10, 64, rng);
  const auto pooled = InfoSource::from_prompt(prompt, model, SourceForm::pooled);
  const auto full = InfoSource::from_prompt(prompt, model, SourceForm::full);

  SUBCASE("none is bit-identical to the bare runtime") {
    AttentionTrace t1, t2;
    auto a = prefill(model, prompt, validate_plan(InjectionPlan{}, model.config), nullptr, &t1);
    auto b = prefill(model, prompt, &t2);
    CHECK(a.cache == b.cache);
    CHECK(a.last_hidden == b.last_hidden);
    CHECK(t1 == t2);
  }
  SUBCASE("hard writes f_info into every scheduled layer") {
    InjectionPlan p;
    p.mode = InjectionMode::hard;
    p.schedule = LayerSchedule::explicit_list({1, 3});
    auto base = prefill(model, prompt);
    auto res = prefill(model, prompt, validate_plan(p, model.config), &pooled);
    for (std::size_t l : {1, 3}) CHECK(res.cache.value_row(l, 0) == pooled.vector().values());
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t pos = 0; pos < prompt.size(); ++pos) CHECK(res.cache.key_row(l, pos) == base.cache.key_row(l, pos));
  }
  SUBCASE("sinktrack keeps regular rows at the first injection layer") {
    auto res = prefill(model, prompt, validate_plan(sinktrack_plan(), model.config), &full);
    auto base = prefill(model, prompt);
    for (std::size_t pos = 0; pos < prompt.size(); ++pos) {
      auto a = res.cache.value_row(0, pos), b = base.cache.value_row(0, pos);
      for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::fabs(a[j] - b[j]) <= 1e-6);
    }
    // the injected BOS state reaches layer 1's cache
    CHECK(res.cache.value_row(1, 0) != base.cache.value_row(1, 0));
  }
  SUBCASE("plans needing info reject a null source") {
    CHECK_THROWS_AS(prefill(model, prompt, validate_plan(sinktrack_plan(), model.config), nullptr), InputError);
  }
}

TEST_CASE("generation under sinktrack never rewrites the prompt") {
  const auto model = testutil::canonical_model();
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    const auto prompt = testutil::random_prompt(4 + rng() % 8, 64, rng);
    const auto info = InfoSource::from_prompt(prompt, model, SourceForm::full);
    auto a = generate(model, prompt, validate_plan(InjectionPlan{}, model.config), nullptr, 6);
    auto b = generate(model, prompt, validate_plan(sinktrack_plan(), model.config), &info, 6);
    std::vector<TokenId> sa(prompt), sb(prompt);
    sa.insert(sa.end(), a.tokens.begin(), a.tokens.end());
    sb.insert(sb.end(), b.tokens.begin(), b.tokens.end());
    std::size_t first_diff = 0;
    while (first_diff < sa.size() && sa[first_diff] == sb[first_diff]) ++first_diff;
    CHECK(first_diff >= prompt.size());
  }
}
