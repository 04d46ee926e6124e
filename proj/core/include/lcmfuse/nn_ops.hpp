#pragma once

#include <cstdint>
#include <vector>

namespace lcmfuse::nn {

// All ops run on packed double buffers with explicit dims. Backward passes
// ACCUMULATE into their gradient outputs; callers zero the buffers when a
// fresh gradient is wanted. Parallel ops shard over samples with fixed shard
// counts, so outputs are independent of the host's thread count.

// y[N,Cout,H,W] = conv3x3(x[N,Cin,H,W], w[Cout,Cin,3,3]) + b, zero padding 1
void conv3x3_forward(const double* x, const double* w, const double* b, double* y, int N, int Cin,
                     int Cout, int H, int W);

// dx may be nullptr when the input gradient is not needed (first layer).
void conv3x3_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                      double* db, int N, int Cin, int Cout, int H, int W);

// 2x2 average pool, H and W must be even; y is [N,C,H/2,W/2]
void avgpool2_forward(const double* x, double* y, int N, int C, int H, int W);
void avgpool2_backward(const double* dy, double* dx, int N, int C, int H, int W);

// nearest-neighbour 2x upsample; y is [N,C,2H,2W]
void upsample2_forward(const double* x, double* y, int N, int C, int H, int W);
void upsample2_backward(const double* dy, double* dx, int N, int C, int H, int W);

void silu_forward(const double* x, double* y, size_t n);
void silu_backward(const double* x, const double* dy, double* dx, size_t n);

// y[N,Out] = x[N,In] * w^T + b with w[Out,In]; dx may be nullptr
void linear_forward(const double* x, const double* w, const double* b, double* y, int N, int In, int Out);
void linear_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     double* db, int N, int In, int Out);

// Saved intermediates for one temporal attention block application.
struct AttentionTrace {
    std::vector<double> u;  // [B,P,F,C] tokens + positional embedding
    std::vector<double> q;  // [B,P,F,C]
    std::vector<double> k;  // [B,P,F,C]
    std::vector<double> v;  // [B,P,F,C]
    std::vector<double> o;  // [B,P,F,C] attention-mixed values
    std::vector<double> a;  // [B,P,F,F] row-softmax weights
};

// Single-head self-attention over the frame axis, applied independently at
// every spatial position, with a residual connection:
//   u_f = h_f + pos_f;  attn(u) -> o;  h_f += wo * o_f + bo
// h layout is the activation layout [B*F, C, P].
void temporal_attention_forward(double* h, const double* pos, const double* wq, const double* bq,
                                const double* wk, const double* bk, const double* wv, const double* bv,
                                const double* wo, const double* bo, int B, int F, int C, int P,
                                AttentionTrace& trace);

// dh holds dL/dh_out on entry and dL/dh_in on exit (residual included).
// Parameter gradients accumulate.
void temporal_attention_backward(double* dh, const double* pos, const double* wq, const double* wk,
                                 const double* wv, const double* wo, const AttentionTrace& trace,
                                 double* dpos, double* dwq, double* dbq, double* dwk, double* dbk,
                                 double* dwv, double* dbv, double* dwo, double* dbo, int B, int F, int C,
                                 int P);

// Mean cross-entropy over the batch. probs/dlogits are optional outputs;
// dlogits receives (softmax - onehot)/N.
double softmax_cross_entropy(const double* logits, const int* targets, int N, int K, double* dlogits,
                             double* probs);

void softmax_rows(const double* logits, double* probs, int N, int K);

}  // namespace lcmfuse::nn
