#include "lcmfuse/nn_ops.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Dense>

#include "lcmfuse/parallel.hpp"

namespace lcmfuse::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// im2col for one sample: x [Cin,H,W] -> cols [Cin*9, H*W], zero padding 1
void im2col3x3(const double* x, double* cols, int Cin, int H, int W) {
    const int P = H * W;
    for (int c = 0; c < Cin; ++c) {
        for (int kh = 0; kh < 3; ++kh) {
            for (int kw = 0; kw < 3; ++kw) {
                double* dst = cols + ((c * 3 + kh) * 3 + kw) * P;
                const int dh = kh - 1, dw = kw - 1;
                for (int h = 0; h < H; ++h) {
                    const int sh = h + dh;
                    if (sh < 0 || sh >= H) {
                        std::memset(dst + h * W, 0, sizeof(double) * static_cast<size_t>(W));
                        continue;
                    }
                    const double* src = x + (c * H + sh) * W;
                    for (int w = 0; w < W; ++w) {
                        const int sw = w + dw;
                        dst[h * W + w] = (sw < 0 || sw >= W) ? 0.0 : src[sw];
                    }
                }
            }
        }
    }
}

// scatter-add the col gradient back to the input gradient
void col2im3x3(const double* cols, double* dx, int Cin, int H, int W) {
    const int P = H * W;
    for (int c = 0; c < Cin; ++c) {
        for (int kh = 0; kh < 3; ++kh) {
            for (int kw = 0; kw < 3; ++kw) {
                const double* src = cols + ((c * 3 + kh) * 3 + kw) * P;
                const int dh = kh - 1, dw = kw - 1;
                for (int h = 0; h < H; ++h) {
                    const int sh = h + dh;
                    if (sh < 0 || sh >= H) continue;
                    double* dst = dx + (c * H + sh) * W;
                    for (int w = 0; w < W; ++w) {
                        const int sw = w + dw;
                        if (sw >= 0 && sw < W) dst[sw] += src[h * W + w];
                    }
                }
            }
        }
    }
}

}  // namespace

void conv3x3_forward(const double* x, const double* w, const double* b, double* y, int N, int Cin,
                     int Cout, int H, int W) {
    const int P = H * W;
    const int K = Cin * 9;
    parallel_ranges(N, [&](int64_t begin, int64_t end) {
        std::vector<double> cols(static_cast<size_t>(K) * P);
        CMapMat wm(w, Cout, K);
        for (int64_t n = begin; n < end; ++n) {
            im2col3x3(x + n * Cin * P, cols.data(), Cin, H, W);
            CMapMat cm(cols.data(), K, P);
            MapMat ym(y + n * Cout * P, Cout, P);
            ym.noalias() = wm * cm;
            for (int co = 0; co < Cout; ++co) ym.row(co).array() += b[co];
        }
    });
}

void conv3x3_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                      double* db, int N, int Cin, int Cout, int H, int W) {
    const int P = H * W;
    const int K = Cin * 9;
    const size_t wlen = static_cast<size_t>(Cout) * K;
    std::vector<double> dw_shards(static_cast<size_t>(kShards) * wlen, 0.0);
    std::vector<double> db_shards(static_cast<size_t>(kShards) * Cout, 0.0);

    parallel_ranges_sharded(N, [&](int shard, int64_t begin, int64_t end) {
        std::vector<double> cols(static_cast<size_t>(K) * P);
        std::vector<double> dcols(static_cast<size_t>(K) * P);
        CMapMat wm(w, Cout, K);
        MapMat dwm(dw_shards.data() + static_cast<size_t>(shard) * wlen, Cout, K);
        double* dbs = db_shards.data() + static_cast<size_t>(shard) * Cout;
        for (int64_t n = begin; n < end; ++n) {
            im2col3x3(x + n * Cin * P, cols.data(), Cin, H, W);
            CMapMat cm(cols.data(), K, P);
            CMapMat dym(dy + n * Cout * P, Cout, P);
            dwm.noalias() += dym * cm.transpose();
            for (int co = 0; co < Cout; ++co) dbs[co] += dym.row(co).sum();
            if (dx != nullptr) {
                MapMat dcm(dcols.data(), K, P);
                dcm.noalias() = wm.transpose() * dym;
                col2im3x3(dcols.data(), dx + n * Cin * P, Cin, H, W);
            }
        }
    });

    for (int s = 0; s < kShards; ++s) {
        const double* dws = dw_shards.data() + static_cast<size_t>(s) * wlen;
        for (size_t i = 0; i < wlen; ++i) dw[i] += dws[i];
        const double* dbs = db_shards.data() + static_cast<size_t>(s) * Cout;
        for (int i = 0; i < Cout; ++i) db[i] += dbs[i];
    }
}

void avgpool2_forward(const double* x, double* y, int N, int C, int H, int W) {
    const int Ho = H / 2, Wo = W / 2;
    parallel_ranges(static_cast<int64_t>(N) * C, [&](int64_t begin, int64_t end) {
        for (int64_t nc = begin; nc < end; ++nc) {
            const double* xp = x + nc * H * W;
            double* yp = y + nc * Ho * Wo;
            for (int h = 0; h < Ho; ++h) {
                for (int w = 0; w < Wo; ++w) {
                    const double* q = xp + (2 * h) * W + 2 * w;
                    yp[h * Wo + w] = 0.25 * (q[0] + q[1] + q[W] + q[W + 1]);
                }
            }
        }
    });
}

void avgpool2_backward(const double* dy, double* dx, int N, int C, int H, int W) {
    const int Ho = H / 2, Wo = W / 2;
    parallel_ranges(static_cast<int64_t>(N) * C, [&](int64_t begin, int64_t end) {
        for (int64_t nc = begin; nc < end; ++nc) {
            const double* dyp = dy + nc * Ho * Wo;
            double* dxp = dx + nc * H * W;
            for (int h = 0; h < Ho; ++h) {
                for (int w = 0; w < Wo; ++w) {
                    const double g = 0.25 * dyp[h * Wo + w];
                    double* q = dxp + (2 * h) * W + 2 * w;
                    q[0] += g;
                    q[1] += g;
                    q[W] += g;
                    q[W + 1] += g;
                }
            }
        }
    });
}

void upsample2_forward(const double* x, double* y, int N, int C, int H, int W) {
    const int Ho = H * 2, Wo = W * 2;
    parallel_ranges(static_cast<int64_t>(N) * C, [&](int64_t begin, int64_t end) {
        for (int64_t nc = begin; nc < end; ++nc) {
            const double* xp = x + nc * H * W;
            double* yp = y + nc * Ho * Wo;
            for (int h = 0; h < Ho; ++h) {
                const double* row = xp + (h / 2) * W;
                for (int w = 0; w < Wo; ++w) yp[h * Wo + w] = row[w / 2];
            }
        }
    });
}

void upsample2_backward(const double* dy, double* dx, int N, int C, int H, int W) {
    const int Ho = H * 2, Wo = W * 2;
    parallel_ranges(static_cast<int64_t>(N) * C, [&](int64_t begin, int64_t end) {
        for (int64_t nc = begin; nc < end; ++nc) {
            const double* dyp = dy + nc * Ho * Wo;
            double* dxp = dx + nc * H * W;
            for (int h = 0; h < Ho; ++h) {
                double* row = dxp + (h / 2) * W;
                for (int w = 0; w < Wo; ++w) row[w / 2] += dyp[h * Wo + w];
            }
        }
    });
}

void silu_forward(const double* x, double* y, size_t n) {
    parallel_ranges(static_cast<int64_t>(n), [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            y[i] = x[i] * s;
        }
    });
}

void silu_backward(const double* x, const double* dy, double* dx, size_t n) {
    parallel_ranges(static_cast<int64_t>(n), [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            dx[i] += dy[i] * s * (1.0 + x[i] * (1.0 - s));
        }
    });
}

void linear_forward(const double* x, const double* w, const double* b, double* y, int N, int In,
                    int Out) {
    CMapMat xm(x, N, In);
    CMapMat wm(w, Out, In);
    MapMat ym(y, N, Out);
    ym.noalias() = xm * wm.transpose();
    if (b != nullptr) {
        for (int n = 0; n < N; ++n) {
            for (int o = 0; o < Out; ++o) ym(n, o) += b[o];
        }
    }
}

void linear_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     double* db, int N, int In, int Out) {
    CMapMat xm(x, N, In);
    CMapMat wm(w, Out, In);
    CMapMat dym(dy, N, Out);
    if (dx != nullptr) {
        MapMat dxm(dx, N, In);
        dxm.noalias() += dym * wm;
    }
    MapMat dwm(dw, Out, In);
    dwm.noalias() += dym.transpose() * xm;
    if (db != nullptr) {
        for (int n = 0; n < N; ++n) {
            for (int o = 0; o < Out; ++o) db[o] += dym(n, o);
        }
    }
}

void temporal_attention_forward(double* h, const double* pos, const double* wq, const double* bq,
                                const double* wk, const double* bk, const double* wv, const double* bv,
                                const double* wo, const double* bo, int B, int F, int C, int P,
                                AttentionTrace& trace) {
    const size_t tok = static_cast<size_t>(B) * P * F * C;
    trace.u.resize(tok);
    trace.q.resize(tok);
    trace.k.resize(tok);
    trace.v.resize(tok);
    trace.o.resize(tok);
    trace.a.resize(static_cast<size_t>(B) * P * F * F);
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(C));

    parallel_ranges(static_cast<int64_t>(B) * P, [&](int64_t begin, int64_t end) {
        CMapMat wqm(wq, C, C), wkm(wk, C, C), wvm(wv, C, C), wom(wo, C, C);
        CMapMat posm(pos, F, C);
        RowMat logits(F, F);
        for (int64_t bp = begin; bp < end; ++bp) {
            const int b = static_cast<int>(bp / P);
            const int p = static_cast<int>(bp % P);
            MapMat U(trace.u.data() + bp * F * C, F, C);
            MapMat Q(trace.q.data() + bp * F * C, F, C);
            MapMat K(trace.k.data() + bp * F * C, F, C);
            MapMat V(trace.v.data() + bp * F * C, F, C);
            MapMat O(trace.o.data() + bp * F * C, F, C);
            MapMat A(trace.a.data() + bp * F * F, F, F);

            for (int f = 0; f < F; ++f) {
                const double* hp = h + (static_cast<int64_t>(b) * F + f) * C * P + p;
                for (int c = 0; c < C; ++c) U(f, c) = hp[static_cast<int64_t>(c) * P] + posm(f, c);
            }
            Q.noalias() = U * wqm.transpose();
            K.noalias() = U * wkm.transpose();
            V.noalias() = U * wvm.transpose();
            for (int f = 0; f < F; ++f) {
                Q.row(f).array() += CMapMat(bq, 1, C).row(0).array();
                K.row(f).array() += CMapMat(bk, 1, C).row(0).array();
                V.row(f).array() += CMapMat(bv, 1, C).row(0).array();
            }
            logits.noalias() = Q * K.transpose() * inv_sqrt_c;
            for (int f = 0; f < F; ++f) {
                const double m = logits.row(f).maxCoeff();
                A.row(f) = (logits.row(f).array() - m).exp();
                A.row(f) /= A.row(f).sum();
            }
            O.noalias() = A * V;
            for (int f = 0; f < F; ++f) {
                double* hp = h + (static_cast<int64_t>(b) * F + f) * C * P + p;
                for (int c = 0; c < C; ++c) {
                    double y = bo[c];
                    for (int j = 0; j < C; ++j) y += wom(c, j) * O(f, j);
                    hp[static_cast<int64_t>(c) * P] += y;
                }
            }
        }
    });
}

void temporal_attention_backward(double* dh, const double* pos, const double* wq, const double* wk,
                                 const double* wv, const double* wo, const AttentionTrace& trace,
                                 double* dpos, double* dwq, double* dbq, double* dwk, double* dbk,
                                 double* dwv, double* dbv, double* dwo, double* dbo, int B, int F, int C,
                                 int P) {
    (void)pos;
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(C));
    const size_t wlen = static_cast<size_t>(C) * C;
    const size_t poslen = static_cast<size_t>(F) * C;
    // per-shard parameter gradients, reduced in shard order below
    std::vector<double> shard_grads(static_cast<size_t>(kShards) * (4 * wlen + 4 * C + poslen), 0.0);
    const size_t stride = 4 * wlen + 4 * C + poslen;

    parallel_ranges_sharded(static_cast<int64_t>(B) * P, [&](int shard, int64_t begin, int64_t end) {
        double* g = shard_grads.data() + static_cast<size_t>(shard) * stride;
        MapMat dwqm(g, C, C), dwkm(g + wlen, C, C), dwvm(g + 2 * wlen, C, C), dwom(g + 3 * wlen, C, C);
        double* dbq_s = g + 4 * wlen;
        double* dbk_s = dbq_s + C;
        double* dbv_s = dbk_s + C;
        double* dbo_s = dbv_s + C;
        MapMat dposm(dbo_s + C, F, C);

        CMapMat wqm(wq, C, C), wkm(wk, C, C), wvm(wv, C, C), wom(wo, C, C);
        RowMat dY(F, C), dO(F, C), dA(F, F), dL(F, F), dQ(F, C), dK(F, C), dV(F, C), dU(F, C);
        for (int64_t bp = begin; bp < end; ++bp) {
            const int b = static_cast<int>(bp / P);
            const int p = static_cast<int>(bp % P);
            CMapMat U(trace.u.data() + bp * F * C, F, C);
            CMapMat Q(trace.q.data() + bp * F * C, F, C);
            CMapMat K(trace.k.data() + bp * F * C, F, C);
            CMapMat V(trace.v.data() + bp * F * C, F, C);
            CMapMat O(trace.o.data() + bp * F * C, F, C);
            CMapMat A(trace.a.data() + bp * F * F, F, F);

            for (int f = 0; f < F; ++f) {
                const double* dhp = dh + (static_cast<int64_t>(b) * F + f) * C * P + p;
                for (int c = 0; c < C; ++c) dY(f, c) = dhp[static_cast<int64_t>(c) * P];
            }
            dwom.noalias() += dY.transpose() * O;
            for (int f = 0; f < F; ++f) {
                for (int c = 0; c < C; ++c) dbo_s[c] += dY(f, c);
            }
            dO.noalias() = dY * wom;
            dA.noalias() = dO * V.transpose();
            dV.noalias() = A.transpose() * dO;
            for (int f = 0; f < F; ++f) {
                const double dot = dA.row(f).cwiseProduct(A.row(f)).sum();
                dL.row(f) = A.row(f).cwiseProduct(dA.row(f).array().matrix() -
                                                  Eigen::RowVectorXd::Constant(F, dot));
            }
            dQ.noalias() = dL * K * inv_sqrt_c;
            dK.noalias() = dL.transpose() * Q * inv_sqrt_c;

            dwqm.noalias() += dQ.transpose() * U;
            dwkm.noalias() += dK.transpose() * U;
            dwvm.noalias() += dV.transpose() * U;
            for (int f = 0; f < F; ++f) {
                for (int c = 0; c < C; ++c) {
                    dbq_s[c] += dQ(f, c);
                    dbk_s[c] += dK(f, c);
                    dbv_s[c] += dV(f, c);
                }
            }
            dU.noalias() = dQ * wqm + dK * wkm + dV * wvm;
            dposm.noalias() += dU;
            for (int f = 0; f < F; ++f) {
                double* dhp = dh + (static_cast<int64_t>(b) * F + f) * C * P + p;
                for (int c = 0; c < C; ++c) dhp[static_cast<int64_t>(c) * P] += dU(f, c);
            }
        }
    });

    for (int s = 0; s < kShards; ++s) {
        const double* g = shard_grads.data() + static_cast<size_t>(s) * stride;
        for (size_t i = 0; i < wlen; ++i) {
            dwq[i] += g[i];
            dwk[i] += g[wlen + i];
            dwv[i] += g[2 * wlen + i];
            dwo[i] += g[3 * wlen + i];
        }
        const double* gb = g + 4 * wlen;
        for (int i = 0; i < C; ++i) {
            dbq[i] += gb[i];
            dbk[i] += gb[C + i];
            dbv[i] += gb[2 * C + i];
            dbo[i] += gb[3 * C + i];
        }
        const double* gp = gb + 4 * C;
        for (size_t i = 0; i < poslen; ++i) dpos[i] += gp[i];
    }
}

double softmax_cross_entropy(const double* logits, const int* targets, int N, int K, double* dlogits,
                             double* probs) {
    double loss = 0.0;
    std::vector<double> row(static_cast<size_t>(K));
    for (int n = 0; n < N; ++n) {
        const double* lp = logits + static_cast<int64_t>(n) * K;
        double m = lp[0];
        for (int k = 1; k < K; ++k) m = std::max(m, lp[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) {
            row[static_cast<size_t>(k)] = std::exp(lp[k] - m);
            z += row[static_cast<size_t>(k)];
        }
        for (int k = 0; k < K; ++k) row[static_cast<size_t>(k)] /= z;
        loss -= std::log(std::max(row[static_cast<size_t>(targets[n])], 1e-300));
        if (probs != nullptr) {
            std::memcpy(probs + static_cast<int64_t>(n) * K, row.data(), sizeof(double) * static_cast<size_t>(K));
        }
        if (dlogits != nullptr) {
            double* dp = dlogits + static_cast<int64_t>(n) * K;
            for (int k = 0; k < K; ++k) dp[k] = row[static_cast<size_t>(k)] / N;
            dp[targets[n]] -= 1.0 / N;
        }
    }
    return loss / N;
}

void softmax_rows(const double* logits, double* probs, int N, int K) {
    for (int n = 0; n < N; ++n) {
        const double* lp = logits + static_cast<int64_t>(n) * K;
        double* pp = probs + static_cast<int64_t>(n) * K;
        double m = lp[0];
        for (int k = 1; k < K; ++k) m = std::max(m, lp[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) {
            pp[k] = std::exp(lp[k] - m);
            z += pp[k];
        }
        for (int k = 0; k < K; ++k) pp[k] /= z;
    }
}

}  // namespace lcmfuse::nn
