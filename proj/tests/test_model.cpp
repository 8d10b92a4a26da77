#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "medlasa/errors.hpp"
#include "medlasa/model/checkpoint.hpp"
#include "medlasa/model/transformer.hpp"
#include "medlasa/numerics/ops.hpp"
#include "medlasa/util/io.hpp"
#include "support/models.hpp"
#include "support/oracles.hpp"
#include "support/scalar_forward.hpp"

using namespace medlasa;

namespace {

using fixture::lively_model;
using fixture::small_config;

EmbeddingNoise noise_on(std::vector<std::size_t> rows, std::size_t d, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  EmbeddingNoise n{std::move(rows), Matrix()};
  n.values = Matrix(n.rows.size(), d);
  for (double& v : n.values.values()) v = dist(rng);
  return n;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = small_config();
  c.n_layers = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  CHECK(parse_weight("W_gate") == Weight::gate);
  CHECK(parse_weight("down") == Weight::down);
  CHECK_THROWS_AS(parse_weight("W_x"), ContractError);
}

TEST_CASE("uniform model gives 1/vocab per step") {
  ModelConfig cfg = small_config(1, 4);
  MicroTransformer zero(cfg);
  const std::vector<int> prompt{0, 2, 3};
  const std::vector<int> one{1}, two{2, 3};
  CHECK(next_token_prob(zero, prompt, one) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(next_token_prob(zero, prompt, two) == doctest::Approx(0.0625).epsilon(1e-15));
}

TEST_CASE("forward matches the scalar oracle on a hand-set one-layer model") {
  ModelConfig cfg = small_config(1, 4);
  cfg.d_model = 4;
  cfg.d_ff = 6;
  MicroTransformer m(cfg);
  std::mt19937_64 rng(9);
  for (auto& [name, w] : m.named_parameters()) *w = oracle::random_matrix(w->rows(), w->cols(), rng, -1, 1);
  const std::vector<int> seq{0, 3, 1, 2};
  const auto expected = oracle::scalar_forward(m, seq);
  const ForwardResult got = forward(m, seq);
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t v = 0; v < 4; ++v) CHECK(got.logits(t, v) == doctest::Approx(expected[t][v]).epsilon(1e-12));
  const std::vector<int> prompt{0, 3, 1}, target{2};
  CHECK(next_token_prob(m, prompt, target) == doctest::Approx(oracle::softmax_at(expected[2], 2)).epsilon(1e-12));
}

TEST_CASE("neutral run arguments reproduce the plain forward") {
  MicroTransformer m = lively_model();
  const std::vector<int> seq{0, 4, 5, 6, 7};
  RunArgs args;
  args.capture = CaptureFlags::all();
  ForwardResult a = forward(m, seq);
  ForwardResult b = forward(m, seq, args);
  CHECK(a.logits == b.logits);
  REQUIRE(b.capture);
  CHECK(b.capture->residual.size() == 2);
  CHECK(b.capture->residual[0].rows() == seq.size());
  CHECK(b.capture->mlp_out[1].cols() == 8);
}

TEST_CASE("restoring the final residual recovers the clean probability") {
  MicroTransformer m = lively_model(3);
  const std::vector<int> prompt{0, 4, 5, 6}, target{9};
  RunArgs clean_args;
  clean_args.capture.residual = true;
  ForwardResult clean = forward(m, prompt, clean_args);
  const double p_clean = sequence_prob_from_logits(clean.logits, prompt.size(), target);

  RunArgs corrupted;
  corrupted.noise = noise_on({1, 2}, 8, 3, 2.0);
  const double p_corrupt = next_token_prob(m, prompt, target, corrupted);
  CHECK(p_corrupt != p_clean);

  auto last = clean.capture->residual[2].row(3);
  corrupted.patches.push_back({Site::residual, 3, 2, std::vector<double>(last.begin(), last.end())});
  CHECK(std::abs(next_token_prob(m, prompt, target, corrupted) - p_clean) < 1e-9);
}

TEST_CASE("property: causal mask isolates earlier positions") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    MicroTransformer m = lively_model(2, seed);
    const std::vector<int> seq{0, 3, 8, 2, 11, 5};
    const Matrix base = forward(m, seq).logits;
    for (std::size_t j = 1; j < seq.size(); ++j) {
      RunArgs args;
      args.noise = noise_on({j}, 8, seed * 31 + j, 1.0);
      const Matrix moved = forward(m, seq, args).logits;
      for (std::size_t t = 0; t < j; ++t)
        for (std::size_t v = 0; v < moved.cols(); ++v) CHECK(moved(t, v) == base(t, v));
      bool changed = false;
      for (std::size_t v = 0; v < moved.cols(); ++v) changed = changed || moved(j, v) != base(j, v);
      CHECK(changed);
    }
  }
}

TEST_CASE("patching a site with its own value is bit-neutral") {
  MicroTransformer m = lively_model(3);
  const std::vector<int> seq{0, 4, 5, 6};
  RunArgs args;
  args.capture = CaptureFlags::all();
  args.noise = noise_on({1}, 8, 5, 1.0);
  ForwardResult ref = forward(m, seq, args);
  for (Site site : {Site::residual, Site::attn_out, Site::mlp_out}) {
    RunArgs patched = args;
    auto v = ref.capture->at(site, 2, 1);
    patched.patches.push_back({site, 2, 1, std::vector<double>(v.begin(), v.end())});
    ForwardResult out = forward(m, seq, patched);
    CHECK(out.logits == ref.logits);
    for (std::size_t l = 0; l < 3; ++l) CHECK(out.capture->residual[l] == ref.capture->residual[l]);
  }
}

TEST_CASE("frozen mlp outputs stay pinned under different inputs") {
  MicroTransformer m = lively_model(4);
  const std::vector<int> seq{0, 4, 5, 6, 7};
  RunArgs first;
  first.capture = CaptureFlags::all();
  first.noise = noise_on({1, 2}, 8, 8, 1.5);
  ForwardResult pinned_source = forward(m, seq, first);

  FreezeSpec freeze{Site::mlp_out, 3, 1, 3, {}};
  for (std::size_t l = 1; l <= 3; ++l) {
    auto v = pinned_source.capture->at(Site::mlp_out, 3, l);
    freeze.values.emplace_back(v.begin(), v.end());
  }
  for (std::uint64_t s = 0; s < 5; ++s) {
    RunArgs other;
    other.capture = CaptureFlags::all();
    other.noise = noise_on({1, 2}, 8, 100 + s, 3.0);
    other.freezes.push_back(freeze);
    ForwardResult r = forward(m, seq, other);
    for (std::size_t l = 1; l <= 3; ++l) {
      auto got = r.capture->at(Site::mlp_out, 3, l);
      CHECK(std::equal(got.begin(), got.end(), freeze.values[l - 1].begin()));
    }
  }
}

TEST_CASE("final residual determines the output distribution") {
  MicroTransformer m = lively_model(2);
  const std::vector<int> a{0, 4, 5, 6}, b{0, 9, 2, 6};
  RunArgs cap;
  cap.capture.residual = true;
  ForwardResult rb = forward(m, b, cap);
  auto last = rb.capture->residual[1].row(3);
  RunArgs patch;
  patch.patches.push_back({Site::residual, 3, 1, std::vector<double>(last.begin(), last.end())});
  ForwardResult ra = forward(m, a, patch);
  for (std::size_t v = 0; v < ra.logits.cols(); ++v) CHECK(ra.logits(3, v) == rb.logits(3, v));
}

TEST_CASE("hook and token validation") {
  MicroTransformer m = lively_model();
  const std::vector<int> seq{0, 4, 5};
  CHECK_THROWS_AS(forward(m, std::vector<int>{0, 99}), VocabError);
  CHECK_THROWS_AS(forward(m, std::vector<int>{}), ContractError);
  RunArgs bad;
  bad.patches.push_back({Site::mlp_out, 1, 0, std::vector<double>(8, 0.0)});
  bad.freezes.push_back({Site::mlp_out, 1, 0, 1, {std::vector<double>(8, 0.0), std::vector<double>(8, 0.0)}});
  CHECK_THROWS_AS(forward(m, seq, bad), ContractError);
  RunArgs out_of_range;
  out_of_range.patches.push_back({Site::residual, 7, 0, std::vector<double>(8, 0.0)});
  CHECK_THROWS_AS(forward(m, seq, out_of_range), ContractError);
  CHECK_THROWS_AS(next_token_prob(m, std::vector<int>{}, std::vector<int>{1}), ContractError);
}

TEST_CASE("greedy generation") {
  MicroTransformer m = lively_model();
  const std::vector<int> prompt{0, 4, 5};
  const auto one = generate(m, prompt, 1);
  REQUIRE(one.size() == 1);
  const Matrix logits = forward(m, prompt).logits;
  CHECK(one[0] == static_cast<int>(argmax(logits.row(2))));
  CHECK(generate(m, prompt, 6) == generate(m, prompt, 6));
  CHECK(generate(m, prompt, 6).size() == 6);
}

TEST_CASE("checkpoint round trip and corruption") {
  MicroTransformer m = lively_model(3);
  const auto dir = std::filesystem::temp_directory_path() / "medlasa_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  save_checkpoint(m, path);
  MicroTransformer back = load_checkpoint(path);
  CHECK(back == m);
  const std::vector<int> seq{0, 4, 5, 6};
  CHECK(forward(back, seq).logits == forward(m, seq).logits);

  const std::string bytes = io::read_file(path);
  io::write_file_atomic(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), FormatError);
  std::string bad = bytes;
  bad[4] = '9';
  io::write_file_atomic(dir / "magic.ckpt", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), FormatError);
  std::filesystem::remove_all(dir);
}
