#include <doctest.h>

#include <random>
#include <set>

#include "medlasa/errors.hpp"
#include "medlasa/scaling/scales.hpp"

using namespace medlasa;

namespace {

ImpactMatrix impact(std::vector<std::vector<double>> rows, Span subject) {
  ImpactMatrix m;
  m.values = Matrix(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.values(r, c) = rows[r][c];
  m.noise.subject = subject;
  return m;
}

ImpactMatrix random_impact(std::mt19937_64& rng, std::size_t T, std::size_t L) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> rows(T, std::vector<double>(L));
  for (auto& r : rows)
    for (double& v : r) v = u(rng);
  std::uniform_int_distribution<std::size_t> b(0, T - 1);
  const std::size_t begin = b(rng);
  return impact(rows, {begin, std::min(T, begin + 1 + b(rng) % 3)});
}

}  // namespace

TEST_CASE("max_min_norm examples") {
  CHECK(max_min_norm(std::vector<double>{2, 4, 6}) == std::vector<double>{0, 0.5, 1});
  CHECK(max_min_norm(std::vector<double>{5, 5, 5}) == std::vector<double>{1, 1, 1});
  CHECK(max_min_norm(std::vector<double>{1, 0}) == std::vector<double>{1, 0});
  CHECK_THROWS_AS(max_min_norm(std::vector<double>{}), ContractError);
}

TEST_CASE("alpha profile") {
  const ImpactMatrix m = impact({{.1, .9}, {.2, .8}, {.3, .7}}, {0, 2});
  CHECK(alpha_profile(m).values == std::vector<double>{0, 1});
  const ImpactMatrix one = impact({{.1, .9, .5}, {.2, .4, .8}}, {1, 2});
  CHECK(alpha_profile(one).values == max_min_norm(std::vector<double>{.2, .4, .8}));
  const ImpactMatrix flat = impact({{.3, .3}, {.3, .3}}, {0, 2});
  CHECK(alpha_profile(flat).values == std::vector<double>{1, 1});
  CHECK_THROWS_AS(alpha_profile(m, Span{1, 1}), ContractError);
  CHECK_THROWS_AS(alpha_profile(m, Span{2, 5}), ContractError);
}

TEST_CASE("rank profile") {
  std::mt19937_64 rng(4);
  const ImpactMatrix a = random_impact(rng, 5, 4);
  const std::vector<ImpactMatrix> single{a};
  CHECK(rank_profile(single).values == alpha_profile(a).values);
  const std::vector<ImpactMatrix> twice{a, a};
  CHECK(rank_profile(twice).values == alpha_profile(a).values);

  // brute-force double loop
  const std::vector<ImpactMatrix> three{random_impact(rng, 5, 4), random_impact(rng, 3, 4), random_impact(rng, 6, 4)};
  std::vector<double> acc(4, 0.0);
  for (const auto& m : three)
    for (std::size_t t = 0; t < m.values.rows(); ++t)
      for (std::size_t l = 0; l < 4; ++l)
        if (m.noise.subject.contains(t)) acc[l] += m.values(t, l);
  const auto lo = *std::min_element(acc.begin(), acc.end()), hi = *std::max_element(acc.begin(), acc.end());
  const auto got = rank_profile(three).values;
  for (std::size_t l = 0; l < 4; ++l) CHECK(got[l] == doctest::Approx((acc[l] - lo) / (hi - lo)).epsilon(1e-14));

  const std::vector<ImpactMatrix> mixed{random_impact(rng, 3, 4), random_impact(rng, 3, 5)};
  CHECK_THROWS_AS(rank_profile(mixed), ContractError);
}

TEST_CASE("make_scale_set examples") {
  const ImpactProfile ia{{0, 0.5, 1}, ProfileKind::alpha, TraceModule::full};
  const ImpactProfile ir{{0, 0.3, 1}, ProfileKind::rank, TraceModule::full};
  const ScaleSet s = make_scale_set(ia, ir, 24, 8);
  CHECK(s.alpha == std::vector<double>{0, 12, 24});
  CHECK(s.rank == std::vector<std::size_t>{0, 3, 8});
  const ImpactProfile tiny{{1e-9, 0, 1}, ProfileKind::rank, TraceModule::full};
  CHECK(make_scale_set(ia, tiny, 24, 8).rank == std::vector<std::size_t>{1, 0, 8});
  CHECK_THROWS_AS(make_scale_set(ia, ImpactProfile{{0, 1}, ProfileKind::rank, TraceModule::full}, 24, 8),
                  ContractError);
  CHECK_THROWS_AS(make_scale_set(ia, ir, 0, 8), ContractError);
  CHECK_THROWS_AS(make_scale_set(ia, ir, 24, 0), ContractError);
}

TEST_CASE("strategies") {
  ScaleContext ctx{4, 24, 8, 1, nullptr, {}};
  const ScaleSet fixed = strategy_scales(Strategy::fixed, ctx);
  CHECK(fixed.alpha == std::vector<double>(4, 24));
  CHECK(fixed.rank == std::vector<std::size_t>(4, 8));

  std::set<std::vector<double>> seen;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ctx.seed = seed;
    const ScaleSet r = strategy_scales(Strategy::random, ctx);
    CHECK(r == strategy_scales(Strategy::random, ctx));
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(r.alpha[l] > 0);
      CHECK(r.alpha[l] <= 24);
      CHECK(r.rank[l] >= 1);
      CHECK(r.rank[l] <= 8);
    }
    seen.insert(r.alpha);
  }
  CHECK(seen.size() == 5);

  CHECK_THROWS_AS(strategy_scales(Strategy::medlasa, ctx), ContractError);
  const std::vector<ImpactMatrix> flat{impact({{.4, .4, .4, .4}, {.4, .4, .4, .4}}, {0, 1})};
  ctx.item = &flat[0];
  ctx.dataset = flat;
  ScaleSet degenerate = strategy_scales(Strategy::medlasa, ctx);
  CHECK(degenerate.alpha == fixed.alpha);
  CHECK(degenerate.rank == fixed.rank);

  const std::vector<ImpactMatrix> shaped{impact({{.1, .2, .6, .3}, {.0, .5, .9, .1}}, {0, 2})};
  ctx.item = &shaped[0];
  ctx.dataset = shaped;
  const ScaleSet med = strategy_scales(Strategy::medlasa, ctx);
  const ScaleSet no_sr = strategy_scales(Strategy::medlasa_no_sr, ctx);
  const ScaleSet no_sa = strategy_scales(Strategy::medlasa_no_sa, ctx);
  CHECK(no_sr.alpha == med.alpha);
  CHECK(no_sr.rank == fixed.rank);
  CHECK(no_sa.alpha == fixed.alpha);
  CHECK(no_sa.rank == med.rank);
  CHECK(med.rank[0] == 0);
  CHECK(med.alpha[2] == 24);
  CHECK(parse_strategy("medlasa-no-sa") == Strategy::medlasa_no_sa);
  CHECK_THROWS_AS(parse_strategy("rome"), ContractError);
}

TEST_CASE("property: scale invariance, monotonicity and rank bounds") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ImpactMatrix> data;
    for (int k = 0; k < 4; ++k) data.push_back(random_impact(rng, 6, 5));
    ScaleContext ctx{5, 24, 8, 0, &data[0], data};
    const ScaleSet base = strategy_scales(Strategy::medlasa, ctx);

    for (double c : {0.25, 2.0, 1024.0}) {
      std::vector<ImpactMatrix> scaled = data;
      for (auto& m : scaled)
        for (double& v : m.values.values()) v *= c;
      ScaleContext sc{5, 24, 8, 0, &scaled[0], scaled};
      CHECK(strategy_scales(Strategy::medlasa, sc) == base);
    }

    std::vector<double> sums(5, 0.0);
    for (const auto& m : data)
      for (std::size_t t = m.noise.subject.begin; t < m.noise.subject.end; ++t)
        for (std::size_t l = 0; l < 5; ++l) sums[l] += m.values(t, l);
    const auto profile = rank_profile(data).values;
    for (std::size_t a = 0; a < 5; ++a) {
      CHECK(base.rank[a] <= 8);
      CHECK((base.rank[a] == 0) == (profile[a] == 0.0));
      for (std::size_t b = 0; b < 5; ++b)
        if (sums[a] >= sums[b]) CHECK(base.rank[a] >= base.rank[b]);
    }

    // equal subject rows give equal alpha profiles
    ImpactMatrix twin = data[0];
    for (std::size_t t = 0; t < twin.values.rows(); ++t)
      if (!twin.noise.subject.contains(t))
        for (std::size_t l = 0; l < 5; ++l) twin.values(t, l) = 0.5;
    CHECK(alpha_profile(twin).values == alpha_profile(data[0]).values);
  }
}

TEST_CASE("scale set JSON round trip") {
  ScaleSet s{{0, 12.5, 24}, {0, 3, 8}, Strategy::medlasa_no_sr, 24, 8};
  CHECK(scale_set_from_json(to_json(s)) == s);
  SiteScales both{s, ScaleSet{{1}, {2}, Strategy::random, 3, 4}};
  CHECK(site_scales_from_json(to_json(both)) == both);
  nlohmann::json bad = to_json(s);
  bad["rank"] = {1};
  CHECK_THROWS_AS(scale_set_from_json(bad), FormatError);
}
