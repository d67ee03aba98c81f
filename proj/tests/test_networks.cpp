#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"

#include "diffe/networks.hpp"
#include "diffe/ops.hpp"

using namespace diffe;

namespace {

NetworkConfig miniature() {
  NetworkConfig c;
  c.in_channels = 2;
  c.n_classes = 3;
  c.denoiser_base = 4;
  c.denoiser_mults = {1, 1, 2, 2};
  c.time_embed_dim = 8;
  c.encoder_base = 4;
  c.latent_dim = 16;
  c.decoder_widths = {8, 8, 4, 4};
  c.tap_channels = 2;
  c.classifier_hidden = 8;
  return c;
}

Tensor random_input(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

std::set<const TensorImpl*> param_ptrs(const std::vector<NamedParam>& params) {
  std::set<const TensorImpl*> s;
  for (const auto& p : params) s.insert(p.tensor.impl().get());
  return s;
}

}  // namespace

TEST_CASE("denoiser output matches input shape, including lengths not divisible by 2^depth") {
  NetworkConfig cfg = miniature();
  Rng rng(1);
  DenoiserUNet net(cfg, rng);
  NoiseSchedule sched = build_schedule(10, 1e-4, 0.02);
  for (int L : {32, 40, 500, 37}) {
    Tensor x = random_input({2, 2, L}, 100 + L);
    auto out = net.forward(x, {1, 10}, sched);
    CHECK(out.x0_hat.shape() == x.shape());
    CHECK(out.taps.size() == 3);
  }
  Tensor x = random_input({1, 2, 32}, 5);
  CHECK_THROWS_AS(net.forward(x, {11}, sched), IndexError);
  CHECK_THROWS_AS(net.forward(x, {0}, sched), IndexError);
  CHECK_THROWS_AS(net.forward(x, {1, 2}, sched), DimensionError);
}

TEST_CASE("zero weights make the denoiser a zero map") {
  NetworkConfig cfg = miniature();
  Rng rng(2);
  DenoiserUNet net(cfg, rng);
  for (auto& p : net.parameters())
    for (double& v : const_cast<Tensor&>(p.tensor).values()) v = 0.0;
  NoiseSchedule sched = build_schedule(4, 1e-4, 0.02);
  Tensor x = random_input({1, 2, 32}, 6);
  auto out = net.forward(x, {2}, sched);
  for (double v : out.x0_hat.values()) CHECK(v == 0.0);
}

TEST_CASE("time conditioning is live") {
  NetworkConfig cfg = miniature();
  Rng rng(3);
  DenoiserUNet net(cfg, rng);
  NoiseSchedule sched = build_schedule(50, 1e-4, 0.02);
  Tensor x = random_input({1, 2, 32}, 7);
  auto a = net.forward(x, {1}, sched);
  auto b = net.forward(x, {50}, sched);
  double linf = 0.0;
  for (int i = 0; i < a.x0_hat.numel(); ++i)
    linf = std::max(linf, std::fabs(a.x0_hat.values()[i] - b.x0_hat.values()[i]));
  CHECK(linf > 0.0);
}

TEST_CASE("encoder emits z of the configured width and is a pure function") {
  NetworkConfig cfg = miniature();
  cfg.latent_dim = 16;
  Rng rng(4);
  Encoder enc(cfg, rng);
  Tensor x = random_input({4, 2, 64}, 8);
  auto out = enc.forward(x);
  CHECK(out.z.shape() == Shape{4, 16});
  CHECK(out.features.size() == 4);

  // duplicate rows in a batch produce identical latents
  Tensor two({2, 2, 64});
  for (int i = 0; i < 2 * 64; ++i) {
    two.values()[static_cast<size_t>(i)] = x.values()[static_cast<size_t>(i)];
    two.values()[static_cast<size_t>(2 * 64 + i)] = x.values()[static_cast<size_t>(i)];
  }
  auto z2 = enc.forward(two);
  for (int j = 0; j < 16; ++j)
    CHECK(z2.z.values()[static_cast<size_t>(j)] == z2.z.values()[static_cast<size_t>(16 + j)]);
}

TEST_CASE("decoder reproduces the input length and zero weights give zero output") {
  NetworkConfig cfg = miniature();
  Rng rng(5);
  DenoiserUNet den(cfg, rng);
  Encoder enc(cfg, rng);
  Decoder dec(cfg, true, rng);
  NoiseSchedule sched = build_schedule(6, 1e-4, 0.02);

  Tensor x0 = random_input({2, 2, 50}, 9);
  auto d = den.forward(x0, {1, 2}, sched);
  auto e = enc.forward(x0);
  Tensor rec = dec.forward(e.features, d.taps, x0, d.x0_hat);
  CHECK(rec.shape() == x0.shape());

  for (auto& p : dec.parameters())
    for (double& v : const_cast<Tensor&>(p.tensor).values()) v = 0.0;
  Tensor zero = dec.forward(e.features, d.taps, x0, d.x0_hat);
  for (double v : zero.values()) CHECK(v == 0.0);

  Decoder plain(cfg, false, rng);
  CHECK_THROWS_AS(plain.forward(e.features, d.taps, x0, d.x0_hat), DimensionError);
  Tensor rec2 = plain.forward(e.features, {}, x0, Tensor());
  CHECK(rec2.shape() == x0.shape());
}

TEST_CASE("classifier output width and purity") {
  NetworkConfig cfg = miniature();
  Rng rng(6);
  Classifier cls(cfg, rng);
  Tensor z = random_input({3, 16}, 10);
  Tensor scores = cls.forward(z);
  CHECK(scores.shape() == Shape{3, 3});
  CHECK_THROWS_AS(cls.forward(random_input({3, 8}, 11)), DimensionError);

  for (auto& p : cls.parameters())
    for (double& v : const_cast<Tensor&>(p.tensor).values()) v = 0.0;
  Tensor zeros = cls.forward(z);
  for (double v : zeros.values()) CHECK(v == 0.0);
}

TEST_CASE("param_count arithmetic") {
  NetworkConfig cfg;
  cfg.in_channels = 8;
  cfg.n_classes = 13;
  Rng rng(7);
  // single affine map 256 -> 13
  cfg.latent_dim = 256;
  Classifier cls(cfg, rng);
  int expect = 256 * 512 + 512 + 512 * 13 + 13;  // default two-layer head
  CHECK(cls.param_count() == expect);

  // default budgets stay in the intended order of magnitude
  DiffEModel m = DiffEModel::build(cfg, Ablation::full, 1);
  const int denoiser = m.denoiser->param_count();
  const int cae = m.encoder.param_count() + m.decoder->param_count();
  CHECK(denoiser + cae >= 100000);
  CHECK(denoiser + cae <= 1000000);
  CHECK(m.classifier.param_count() >= 100000);
  CHECK(m.classifier.param_count() <= 1000000);
}

TEST_CASE("inference path touches no denoiser or decoder parameters") {
  NetworkConfig cfg = miniature();
  DiffEModel m = DiffEModel::build(cfg, Ablation::full, 3);
  Tensor x0 = random_input({2, 2, 48}, 12);

  // trace with the tape on
  Tensor scores = m.classifier.forward(m.encoder.forward(x0).z);
  auto reached = reachable_parameters(mean_all(scores));
  std::set<const TensorImpl*> reached_set;
  for (auto& r : reached) reached_set.insert(r.get());

  const auto denoiser_params = param_ptrs(m.denoiser->parameters());
  const auto decoder_params = param_ptrs(m.decoder->parameters());
  const auto encoder_params = param_ptrs(m.encoder.parameters());
  const auto classifier_params = param_ptrs(m.classifier.parameters());
  for (const auto* p : reached_set) {
    CHECK_FALSE(denoiser_params.count(p));
    CHECK_FALSE(decoder_params.count(p));
  }
  // and it does consume all encoder + classifier weights
  for (const auto* p : encoder_params) CHECK(reached_set.count(p));
  for (const auto* p : classifier_params) CHECK(reached_set.count(p));
}

TEST_CASE("composite grad_check over the full model graph at (1,2,32)") {
  NetworkConfig cfg = miniature();
  DiffEModel m = DiffEModel::build(cfg, Ablation::full, 4);
  NoiseSchedule sched = build_schedule(8, 1e-4, 0.02);
  Tensor x0 = random_input({1, 2, 32}, 13);
  Tensor noise = random_input({1, 2, 32}, 14);
  Tensor x_t = forward_sample(x0, 5, noise, sched);

  // differentiate through denoiser, decoder taps, encoder and classifier at
  // once; the reduction in grad_check covers the whole output
  std::vector<Tensor> params;
  for (auto& p : m.all_parameters()) params.push_back(p.tensor);
  auto fn = [&](const std::vector<Tensor>&) {
    auto den = m.denoiser->forward(x_t, {5}, sched);
    auto enc = m.encoder.forward(x0);
    Tensor rec = m.decoder->forward(enc.features, den.taps, x0, den.x0_hat);
    Tensor scores = m.classifier.forward(enc.z);
    return add(mean_all(rec), add(mean_all(scores), mean_all(den.x0_hat)));
  };
  CHECK(grad_check(fn, params, 1e-5) < 1e-5);
}

TEST_CASE("gradients flow into both encoder and denoiser through the decoder taps") {
  NetworkConfig cfg = miniature();
  DiffEModel m = DiffEModel::build(cfg, Ablation::full, 5);
  NoiseSchedule sched = build_schedule(8, 1e-4, 0.02);
  Tensor x0 = random_input({1, 2, 32}, 15);
  Tensor x_t = forward_sample(x0, 3, random_input({1, 2, 32}, 16), sched);

  auto den = m.denoiser->forward(x_t, {3}, sched);
  auto enc = m.encoder.forward(x0);
  Tensor rec = m.decoder->forward(enc.features, den.taps, x0, den.x0_hat);
  backward(mean_all(rec));

  auto touched_norm = [](const std::vector<NamedParam>& params) {
    double norm = 0.0;
    for (const auto& p : params)
      if (p.tensor.has_grad())
        for (double g : p.tensor.impl()->grad) norm += g * g;
    return norm;
  };
  CHECK(touched_norm(m.denoiser->parameters()) > 0.0);
  CHECK(touched_norm(m.encoder.parameters()) > 0.0);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject corruption") {
  const auto path = std::filesystem::temp_directory_path() / "diffe_test_ckpt.bin";
  NetworkConfig cfg = miniature();
  DiffEModel m = DiffEModel::build(cfg, Ablation::full, 6);
  save_checkpoint(m, path);
  DiffEModel r = load_checkpoint(path);
  CHECK(r.ablation == Ablation::full);
  const auto a = m.all_parameters();
  const auto b = r.all_parameters();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    auto av = a[i].tensor.values();
    auto bv = b[i].tensor.values();
    for (size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);
  }

  // second save produces identical bytes
  const auto path2 = std::filesystem::temp_directory_path() / "diffe_test_ckpt2.bin";
  save_checkpoint(r, path2);
  std::ifstream fa(path, std::ios::binary), fb(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {});
  std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 11);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("ablation variants build the right components") {
  NetworkConfig cfg = miniature();
  DiffEModel full = DiffEModel::build(cfg, Ablation::full, 7);
  CHECK(full.denoiser.has_value());
  CHECK(full.decoder.has_value());
  DiffEModel nd = DiffEModel::build(cfg, Ablation::no_ddpm, 7);
  CHECK_FALSE(nd.denoiser.has_value());
  CHECK(nd.decoder.has_value());
  CHECK_FALSE(nd.decoder->conditioned_on_ddpm());
  DiffEModel ndd = DiffEModel::build(cfg, Ablation::no_ddpm_no_decoder, 7);
  CHECK_FALSE(ndd.denoiser.has_value());
  CHECK_FALSE(ndd.decoder.has_value());
}
