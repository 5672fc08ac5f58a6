#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mlrf/errors.hpp"
#include "mlrf/fusion.hpp"
#include "mlrf/model.hpp"
#include "mlrf/ops.hpp"
#include "mlrf/training.hpp"
#include "support.hpp"

using namespace mlrf;
using mlrf::testing::check_gradients;
using mlrf::testing::random_tensor;

namespace {

LayerStack random_stack(std::size_t n, std::size_t seq, std::size_t d, std::mt19937_64& rng) {
  LayerStack s;
  for (std::size_t l = 0; l < n; ++l) s.reps.push_back(random_tensor({seq, d}, rng));
  return s;
}

LinearParams random_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {random_tensor({in, out}, rng, 0.4), random_tensor({out}, rng, 0.4)};
}

LayerNormParams random_norm(std::size_t d, std::mt19937_64& rng) {
  return {random_tensor({d}, rng, 1.0), random_tensor({d}, rng, 1.0)};
}

SelfAttentionFusionParams random_sa(std::size_t n, std::size_t d, std::size_t d_a, std::size_t hops,
                                    std::size_t d_f, bool shared_w1, std::mt19937_64& rng) {
  SelfAttentionFusionParams p;
  p.layer_embedding = random_tensor({n, d}, rng, 0.3);
  for (std::size_t i = 0; i < (shared_w1 ? 1 : n); ++i) p.w1.push_back(random_tensor({d, d_a}, rng, 0.5));
  p.w2 = random_tensor({d_a, hops}, rng, 0.8);
  p.ffn = {random_linear(hops * d, d_f, rng), random_linear(d_f, d, rng)};
  p.norm = random_norm(d, rng);
  return p;
}

std::vector<double> ln_row(std::vector<double> v, const LayerNormParams& p) {
  double mu = 0, var = 0;
  for (double x : v) mu += x / static_cast<double>(v.size());
  for (double x : v) var += (x - mu) * (x - mu) / static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = p.gain.at(i) * (v[i] - mu) / std::sqrt(var + kLayerNormEpsilon) + p.bias.at(i);
  }
  return v;
}

std::vector<double> ffn_row(const std::vector<double>& x, const FeedForwardParams& f) {
  const std::size_t hid = f.inner.b.numel(), out = f.outer.b.numel();
  std::vector<double> h(hid), y(out);
  for (std::size_t j = 0; j < hid; ++j) {
    double s = f.inner.b.at(j);
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * f.inner.w.at(i, j);
    h[j] = std::max(0.0, s);
  }
  for (std::size_t j = 0; j < out; ++j) {
    double s = f.outer.b.at(j);
    for (std::size_t i = 0; i < hid; ++i) s += h[i] * f.outer.w.at(i, j);
    y[j] = s;
  }
  return y;
}

struct SaReference {
  std::vector<double> weights;  // [pos][hop][layer]
  std::vector<double> fused;    // [pos][d]
};

SaReference reference_sa(const LayerStack& z, const SelfAttentionFusionParams& p) {
  const std::size_t n = z.size(), seq = z[0].dim(0), d = z[0].dim(1);
  const std::size_t d_a = p.w1[0].dim(1), hops = p.w2.dim(1);
  SaReference out;
  for (std::size_t pos = 0; pos < seq; ++pos) {
    std::vector<std::vector<double>> tagged(n, std::vector<double>(d));
    std::vector<std::vector<double>> energy(n, std::vector<double>(hops));
    for (std::size_t l = 0; l < n; ++l) {
      for (std::size_t c = 0; c < d; ++c) tagged[l][c] = z[l].at(pos, c) + p.layer_embedding.at(l, c);
      const Tensor& w1 = p.w1.size() == 1 ? p.w1[0] : p.w1[l];
      std::vector<double> hidden(d_a);
      for (std::size_t a = 0; a < d_a; ++a) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) s += tagged[l][c] * w1.at(c, a);
        hidden[a] = std::tanh(s);
      }
      for (std::size_t h = 0; h < hops; ++h) {
        double s = 0;
        for (std::size_t a = 0; a < d_a; ++a) s += hidden[a] * p.w2.at(a, h);
        energy[l][h] = s;
      }
    }
    std::vector<double> flat;
    for (std::size_t h = 0; h < hops; ++h) {
      double mx = -1e300, z_sum = 0;
      for (std::size_t l = 0; l < n; ++l) mx = std::max(mx, energy[l][h]);
      std::vector<double> a(n);
      for (std::size_t l = 0; l < n; ++l) z_sum += (a[l] = std::exp(energy[l][h] - mx));
      std::vector<double> m(d, 0.0);
      for (std::size_t l = 0; l < n; ++l) {
        a[l] /= z_sum;
        out.weights.push_back(a[l]);
        for (std::size_t c = 0; c < d; ++c) m[c] += a[l] * tagged[l][c];
      }
      flat.insert(flat.end(), m.begin(), m.end());
    }
    const auto fused = ln_row(ffn_row(flat, p.ffn), p.norm);
    out.fused.insert(out.fused.end(), fused.begin(), fused.end());
  }
  return out;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.layers = 2;
  c.d = 8;
  c.d_ff = 16;
  c.heads = 2;
  c.src_vocab = 11;
  c.tgt_vocab = 11;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST(FusionConfig, ParsesNamesAndRejectsBadValues) {
  EXPECT_EQ(parse_fusion_kind("sa"), FusionKind::self_attention);
  EXPECT_EQ(parse_fusion_kind("fnn"), FusionKind::fnn);
  EXPECT_EQ(parse_fusion_side("both"), FusionSide::both);
  EXPECT_THROW(parse_fusion_kind("mlp"), ConfigError);
  FusionConfig f;
  f.n_hop = 0;
  EXPECT_THROW(f.validate(), ConfigError);
}

TEST(FusionInput, DropsEmbeddingLayerWhenExcluded) {
  std::mt19937_64 rng(1);
  const LayerStack s = random_stack(4, 2, 3, rng);
  EXPECT_EQ(fusion_input(s, true).size(), 4u);
  const LayerStack without = fusion_input(s, false);
  ASSERT_EQ(without.size(), 3u);
  EXPECT_EQ(without[0].node(), s[1].node());
}

TEST(FuseBaseline, ReturnsTopLayer) {
  std::mt19937_64 rng(1);
  const LayerStack s = random_stack(3, 2, 4, rng);
  EXPECT_EQ(fuse_baseline(s).node(), s.top().node());
}

TEST(FuseAvg, LayerNormOfMean) {
  std::mt19937_64 rng(2);
  const LayerStack s = random_stack(3, 2, 4, rng);
  const LayerNormParams norm = random_norm(4, rng);
  const Tensor y = fuse_avg(s, norm);
  for (std::size_t p = 0; p < 2; ++p) {
    std::vector<double> m(4);
    for (std::size_t c = 0; c < 4; ++c) m[c] = (s[0].at(p, c) + s[1].at(p, c) + s[2].at(p, c)) / 3.0;
    const auto ref = ln_row(m, norm);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y.at(p, c), ref[c], 1e-12);
  }
}

TEST(FuseFnn, FeedForwardOverConcatenatedLayers) {
  std::mt19937_64 rng(3);
  const LayerStack s = random_stack(3, 2, 4, rng);
  FnnFusionParams p{{random_linear(12, 5, rng), random_linear(5, 4, rng)}, random_norm(4, rng)};
  const Tensor y = fuse_fnn(s, p);
  for (std::size_t pos = 0; pos < 2; ++pos) {
    std::vector<double> x;
    for (std::size_t l = 0; l < 3; ++l) {
      for (std::size_t c = 0; c < 4; ++c) x.push_back(s[l].at(pos, c));
    }
    const auto ref = ln_row(ffn_row(x, p.ffn), p.norm);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y.at(pos, c), ref[c], 1e-12);
  }
}

class SelfAttentionFusion : public ::testing::TestWithParam<bool> {};

TEST_P(SelfAttentionFusion, MatchesNaiveReference) {
  std::mt19937_64 rng(4);
  const LayerStack s = random_stack(4, 3, 6, rng);
  const auto p = random_sa(4, 6, 5, 3, 7, GetParam(), rng);
  const FusionResult r = fuse_self_attention(s, p, 0);
  const SaReference ref = reference_sa(s, p);
  ASSERT_TRUE(r.trace.has_value());
  ASSERT_EQ(r.trace->weights.size(), ref.weights.size());
  for (std::size_t i = 0; i < ref.weights.size(); ++i) EXPECT_NEAR(r.trace->weights[i], ref.weights[i], 1e-12);
  for (std::size_t i = 0; i < ref.fused.size(); ++i) EXPECT_NEAR(r.fused.at(i), ref.fused[i], 1e-12);
  EXPECT_EQ(r.intermediate_shape, (Shape{3, 3, 6}));
}

TEST_P(SelfAttentionFusion, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const LayerStack s = random_stack(3, 2, 4, rng);
  const auto p = random_sa(3, 4, 5, 2, 6, GetParam(), rng);
  std::vector<Tensor> inputs = {p.layer_embedding, p.w2, p.ffn.inner.w, p.ffn.outer.b, p.norm.gain, s[0], s[2]};
  inputs.insert(inputs.end(), p.w1.begin(), p.w1.end());
  const Tensor probe = random_tensor({2, 4}, rng, 1.0, false);
  const auto result = check_gradients([&] { return sum(mul(fuse_self_attention(s, p).fused, probe)); }, inputs);
  EXPECT_LT(result.worst, 1e-6) << result.worst_where;
}

INSTANTIATE_TEST_SUITE_P(SharedAndPerLayerW1, SelfAttentionFusion, ::testing::Bool());

TEST(SelfAttentionFusionShape, SingleHopDegradesToVector) {
  std::mt19937_64 rng(6);
  const LayerStack s = random_stack(3, 5, 4, rng);
  const auto p = random_sa(3, 4, 6, 1, 5, true, rng);
  const FusionResult r = fuse_self_attention(s, p, 1);
  EXPECT_EQ(r.intermediate_shape, (Shape{5, 1, 4}));
  EXPECT_EQ(r.trace->first_layer, 1u);
  EXPECT_EQ(r.fused.shape(), (Shape{5, 4}));
}

TEST(SelfAttentionFusionShape, RejectsWrongLayerEmbedding) {
  std::mt19937_64 rng(7);
  const LayerStack s = random_stack(3, 2, 4, rng);
  const auto p = random_sa(4, 4, 6, 2, 5, true, rng);
  EXPECT_THROW(fuse_self_attention(s, p), DimensionError);
}

TEST(FusionLayout, CountsMatchClosedForm) {
  const ModelConfig m = tiny_model();
  for (FusionKind kind : {FusionKind::avg, FusionKind::fnn, FusionKind::self_attention}) {
    for (bool shared : {true, false}) {
      for (bool embed : {true, false}) {
        FusionConfig f;
        f.side = FusionSide::both;
        f.enc_kind = kind;
        f.dec_kind = kind;
        f.n_hop = 3;
        f.d_a = 16;
        f.d_f = 12;
        f.include_embedding = embed;
        f.share_w1 = shared;
        f.share_layer_embedding = shared;
        std::size_t counted = 0;
        for (const auto& spec : fusion_layout(m, f)) counted += shape_numel(spec.shape);
        const std::size_t expected = 2 * fusion_site_parameters(kind, m, f) + layer_embedding_parameters(m, f);
        EXPECT_EQ(counted, expected) << to_string(kind) << " shared=" << shared << " embed=" << embed;
      }
    }
  }
}

TEST(FusionLayout, HandCountedSelfAttentionSite) {
  // d=8, n=3 layers, d_a=16, n_hop=3, d_f=12:
  // w1 8*16 + w2 16*3 + ffn (24*12 + 12 + 12*8 + 8) + norm 16.
  FusionConfig f;
  f.side = FusionSide::decoder;
  f.dec_kind = FusionKind::self_attention;
  f.n_hop = 3;
  f.d_a = 16;
  f.d_f = 12;
  EXPECT_EQ(fusion_site_parameters(FusionKind::self_attention, tiny_model(), f),
            128u + 48u + 288u + 12u + 96u + 8u + 16u);
  EXPECT_EQ(layer_embedding_parameters(tiny_model(), f), 24u);
}

TEST(FusionSite, DecoderBaselineMatchesUnfusedModel) {
  FusionConfig baseline_side;
  baseline_side.side = FusionSide::decoder;
  baseline_side.dec_kind = FusionKind::baseline;
  const Seq2SeqModel plain = make_model(tiny_model(), FusionConfig{}, 8);
  const Seq2SeqModel fused(tiny_model(), baseline_side, plain.params().clone());
  const std::vector<int> src = {4, 5, 6, 7};
  const std::vector<int> tgt = {1, 8, 9};
  NoGradGuard no_grad;
  const Tensor a = plain.forward(src, tgt, RunContext{}).logits;
  const Tensor b = fused.forward(src, tgt, RunContext{}).logits;
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(FusionSite, TraceCoversEveryFusedLayer) {
  FusionConfig f;
  f.side = FusionSide::both;
  f.enc_kind = FusionKind::self_attention;
  f.dec_kind = FusionKind::self_attention;
  f.n_hop = 4;
  f.d_a = 6;
  f.d_f = 5;
  for (bool embed : {true, false}) {
    f.include_embedding = embed;
    const Seq2SeqModel model = make_model(tiny_model(), f, 9);
    const std::vector<int> src = {4, 5, 6};
    const std::vector<int> tgt = {1, 7};
    const ForwardOutput out = model.forward(src, tgt, RunContext{});
    ASSERT_TRUE(out.decoder_trace.has_value());
    EXPECT_EQ(out.decoder_trace->layers, embed ? 3u : 2u);
    EXPECT_EQ(out.decoder_trace->first_layer, embed ? 0u : 1u);
    EXPECT_EQ(out.decoder_trace->hops, 4u);
    EXPECT_EQ(out.decoder_intermediate_shape, (Shape{2, 4, 8}));
  }
}
