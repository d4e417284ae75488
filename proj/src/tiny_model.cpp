#include "clear/tiny_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "clear/rng.hpp"

namespace clear {

using nlohmann::json;

namespace {

constexpr double kLnEps = 1e-5;

// out = A * B  (A: m x k, B: k x n)
Mat matmul(const Mat& A, const Mat& B) {
    Mat out(A.rows, B.cols);
    for (size_t i = 0; i < A.rows; ++i) {
        for (size_t k = 0; k < A.cols; ++k) {
            double av = A(i, k);
            if (av == 0.0) continue;
            for (size_t j = 0; j < B.cols; ++j) out(i, j) += av * B(k, j);
        }
    }
    return out;
}

// out = A * B^T  (A: m x n, B: k x n)
Mat matmul_bt(const Mat& A, const Mat& B) {
    Mat out(A.rows, B.rows);
    for (size_t i = 0; i < A.rows; ++i)
        for (size_t k = 0; k < B.rows; ++k) {
            double s = 0.0;
            for (size_t j = 0; j < A.cols; ++j) s += A(i, j) * B(k, j);
            out(i, k) = s;
        }
    return out;
}

// out += A^T * B  (A: m x k, B: m x n, out: k x n)
void add_at_b(Mat& out, const Mat& A, const Mat& B) {
    for (size_t i = 0; i < A.rows; ++i)
        for (size_t k = 0; k < A.cols; ++k) {
            double av = A(i, k);
            if (av == 0.0) continue;
            for (size_t j = 0; j < B.cols; ++j) out(k, j) += av * B(i, j);
        }
}

void add_rowwise(Mat& out, const Mat& d) {  // out (1 x n) += column sums of d
    for (size_t i = 0; i < d.rows; ++i)
        for (size_t j = 0; j < d.cols; ++j) out(0, j) += d(i, j);
}

struct LnCache {
    std::vector<double> istd;  // per row
    Mat xhat;
};

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, LnCache& cache) {
    Mat out(x.rows, x.cols);
    cache.istd.resize(x.rows);
    cache.xhat = Mat(x.rows, x.cols);
    double inv_d = 1.0 / static_cast<double>(x.cols);
    for (size_t i = 0; i < x.rows; ++i) {
        double mu = 0.0;
        for (size_t j = 0; j < x.cols; ++j) mu += x(i, j);
        mu *= inv_d;
        double var = 0.0;
        for (size_t j = 0; j < x.cols; ++j) {
            double dcentered = x(i, j) - mu;
            var += dcentered * dcentered;
        }
        var *= inv_d;
        double istd = 1.0 / std::sqrt(var + kLnEps);
        cache.istd[i] = istd;
        for (size_t j = 0; j < x.cols; ++j) {
            double xh = (x(i, j) - mu) * istd;
            cache.xhat(i, j) = xh;
            out(i, j) = g(0, j) * xh + b(0, j);
        }
    }
    return out;
}

// Accumulates dx; adds into dg/db.
Mat layer_norm_backward(const Mat& dy, const Mat& g, const LnCache& cache, Mat& dg,
                        Mat& db) {
    Mat dx(dy.rows, dy.cols);
    double inv_d = 1.0 / static_cast<double>(dy.cols);
    for (size_t i = 0; i < dy.rows; ++i) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (size_t j = 0; j < dy.cols; ++j) {
            double dxhat = dy(i, j) * g(0, j);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * cache.xhat(i, j);
            dg(0, j) += dy(i, j) * cache.xhat(i, j);
            db(0, j) += dy(i, j);
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        for (size_t j = 0; j < dy.cols; ++j) {
            double dxhat = dy(i, j) * g(0, j);
            dx(i, j) = cache.istd[i] *
                       (dxhat - mean_dxhat - cache.xhat(i, j) * mean_dxhat_xhat);
        }
    }
    return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) {
    double t = kGeluC * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(t));
}

double gelu_grad(double x) {
    double x3 = 0.044715 * x * x * x;
    double t = kGeluC * (x + x3);
    double th = std::tanh(t);
    double sech2 = 1.0 - th * th;
    return 0.5 * (1.0 + th) + 0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

struct LayerCache {
    Mat x_in;
    LnCache ln1;
    Mat a, q, k, v;
    std::vector<Mat> att;  // per head, T x T
    Mat ctx;
    Mat x_mid;
    LnCache ln2;
    Mat m, u, gact;
};

struct FullCache {
    std::vector<LayerCache> layers;
    Mat x_final;
    LnCache lnf;
    Mat f;
    Mat logits;
};

}  // namespace

void TinyModelConfig::validate() const {
    if (vocab_size < 5)
        throw Error(ErrorKind::config,
                    "vocab_size must cover the four reserved tokens plus content");
    if (layers < 1 || heads < 1 || model_dim < 1 || max_seq_len < 1)
        throw Error(ErrorKind::config, "all model counts must be >= 1");
    if (model_dim % heads != 0)
        throw Error(ErrorKind::config, "model_dim must be divisible by heads");
}

TinyModel::TinyModel(const TinyModelConfig& config, Tokenizer tokenizer)
    : config_(config), tokenizer_(std::move(tokenizer)) {
    config_.validate();
    if (tokenizer_.vocab_size() > config_.vocab_size)
        throw Error(ErrorKind::config,
                    "tokenizer vocabulary (" + std::to_string(tokenizer_.vocab_size()) +
                        ") exceeds configured vocab_size (" +
                        std::to_string(config_.vocab_size) + ")");
    init_params();
}

std::vector<std::pair<std::string, Mat*>> TinyModel::named_tensors(TinyParams& p) {
    std::vector<std::pair<std::string, Mat*>> out;
    out.emplace_back("tok_emb", &p.tok_emb);
    out.emplace_back("pos_emb", &p.pos_emb);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        TinyLayerParams& lp = p.layers[l];
        out.emplace_back(pre + "ln1_g", &lp.ln1_g);
        out.emplace_back(pre + "ln1_b", &lp.ln1_b);
        out.emplace_back(pre + "wq", &lp.wq);
        out.emplace_back(pre + "wk", &lp.wk);
        out.emplace_back(pre + "wv", &lp.wv);
        out.emplace_back(pre + "wo", &lp.wo);
        out.emplace_back(pre + "ln2_g", &lp.ln2_g);
        out.emplace_back(pre + "ln2_b", &lp.ln2_b);
        out.emplace_back(pre + "w1", &lp.w1);
        out.emplace_back(pre + "b1", &lp.b1);
        out.emplace_back(pre + "w2", &lp.w2);
        out.emplace_back(pre + "b2", &lp.b2);
    }
    out.emplace_back("lnf_g", &p.lnf_g);
    out.emplace_back("lnf_b", &p.lnf_b);
    out.emplace_back("w_out", &p.w_out);
    return out;
}

std::vector<std::pair<std::string, Mat*>> TinyModel::named_params() {
    return named_tensors(params_);
}

std::vector<std::pair<std::string, const Mat*>> TinyModel::named_params() const {
    auto mut = named_tensors(const_cast<TinyParams&>(params_));
    std::vector<std::pair<std::string, const Mat*>> out;
    out.reserve(mut.size());
    for (auto& [name, m] : mut) out.emplace_back(name, m);
    return out;
}

TinyParams TinyModel::zero_like() const {
    TinyParams z;
    size_t d = config_.model_dim;
    z.tok_emb = Mat(config_.vocab_size, d);
    z.pos_emb = Mat(config_.max_seq_len, d);
    z.layers.resize(config_.layers);
    for (auto& lp : z.layers) {
        lp.ln1_g = Mat(1, d);
        lp.ln1_b = Mat(1, d);
        lp.wq = Mat(d, d);
        lp.wk = Mat(d, d);
        lp.wv = Mat(d, d);
        lp.wo = Mat(d, d);
        lp.ln2_g = Mat(1, d);
        lp.ln2_b = Mat(1, d);
        lp.w1 = Mat(d, 4 * d);
        lp.b1 = Mat(1, 4 * d);
        lp.w2 = Mat(4 * d, d);
        lp.b2 = Mat(1, d);
    }
    z.lnf_g = Mat(1, d);
    z.lnf_b = Mat(1, d);
    z.w_out = Mat(d, config_.vocab_size);
    return z;
}

void TinyModel::init_params() {
    params_ = zero_like();
    Rng rng(config_.seed);
    constexpr double kInitStd = 0.02;
    for (auto& [name, m] : named_params()) {
        bool is_gain = name.size() > 2 && name.substr(name.size() - 2) == "_g";
        bool is_bias = (name.size() > 2 && name.substr(name.size() - 2) == "_b") ||
                       name.find(".b1") != std::string::npos ||
                       name.find(".b2") != std::string::npos;
        if (is_gain) {
            std::fill(m->a.begin(), m->a.end(), 1.0);
        } else if (is_bias) {
            m->zero();
        } else {
            for (double& v : m->a) v = kInitStd * rng.next_gaussian();
        }
    }
}

void TinyModel::check_input(const std::vector<int>& token_ids) const {
    if (token_ids.empty()) throw Error(ErrorKind::contract, "forward: empty input");
    if (token_ids.size() > config_.max_seq_len)
        throw Error(ErrorKind::contract,
                    "input length " + std::to_string(token_ids.size()) +
                        " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    for (int id : token_ids)
        if (id < 0 || static_cast<size_t>(id) >= config_.vocab_size)
            throw Error(ErrorKind::contract,
                        "token id " + std::to_string(id) + " out of vocabulary");
}

namespace {

void run_forward(const TinyModelConfig& cfg, const TinyParams& p,
                 const std::vector<int>& ids, FullCache& cache,
                 std::vector<Mat>* hidden_out) {
    size_t T = ids.size();
    size_t d = cfg.model_dim;
    size_t H = cfg.heads;
    size_t hd = d / H;
    double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    Mat x(T, d);
    for (size_t t = 0; t < T; ++t)
        for (size_t j = 0; j < d; ++j)
            x(t, j) = p.tok_emb(static_cast<size_t>(ids[t]), j) + p.pos_emb(t, j);
    if (hidden_out) hidden_out->push_back(x);

    cache.layers.resize(cfg.layers);
    for (size_t l = 0; l < cfg.layers; ++l) {
        LayerCache& lc = cache.layers[l];
        const TinyLayerParams& lp = p.layers[l];
        lc.x_in = x;

        lc.a = layer_norm(lc.x_in, lp.ln1_g, lp.ln1_b, lc.ln1);
        lc.q = matmul(lc.a, lp.wq);
        lc.k = matmul(lc.a, lp.wk);
        lc.v = matmul(lc.a, lp.wv);

        lc.att.assign(H, Mat(T, T));
        lc.ctx = Mat(T, d);
        for (size_t h = 0; h < H; ++h) {
            size_t off = h * hd;
            Mat& A = lc.att[h];
            for (size_t i = 0; i < T; ++i) {
                // causal scores with a stable softmax
                double max_s = -std::numeric_limits<double>::infinity();
                std::vector<double> scores(i + 1);
                for (size_t j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (size_t c = 0; c < hd; ++c)
                        s += lc.q(i, off + c) * lc.k(j, off + c);
                    s *= inv_sqrt_hd;
                    scores[j] = s;
                    max_s = std::max(max_s, s);
                }
                double denom = 0.0;
                for (size_t j = 0; j <= i; ++j) {
                    scores[j] = std::exp(scores[j] - max_s);
                    denom += scores[j];
                }
                for (size_t j = 0; j <= i; ++j) {
                    double w = scores[j] / denom;
                    A(i, j) = w;
                    for (size_t c = 0; c < hd; ++c)
                        lc.ctx(i, off + c) += w * lc.v(j, off + c);
                }
            }
        }
        Mat attn_out = matmul(lc.ctx, lp.wo);
        lc.x_mid = Mat(T, d);
        for (size_t i = 0; i < lc.x_mid.size(); ++i)
            lc.x_mid.a[i] = lc.x_in.a[i] + attn_out.a[i];

        lc.m = layer_norm(lc.x_mid, lp.ln2_g, lp.ln2_b, lc.ln2);
        lc.u = matmul(lc.m, lp.w1);
        for (size_t i = 0; i < T; ++i)
            for (size_t j = 0; j < 4 * d; ++j) lc.u(i, j) += lp.b1(0, j);
        lc.gact = Mat(T, 4 * d);
        for (size_t i = 0; i < lc.u.size(); ++i) lc.gact.a[i] = gelu(lc.u.a[i]);
        Mat y = matmul(lc.gact, lp.w2);
        for (size_t i = 0; i < T; ++i)
            for (size_t j = 0; j < d; ++j) y(i, j) += lp.b2(0, j);

        x = Mat(T, d);
        for (size_t i = 0; i < x.size(); ++i) x.a[i] = lc.x_mid.a[i] + y.a[i];
        if (hidden_out) hidden_out->push_back(x);
    }

    cache.x_final = x;
    cache.f = layer_norm(cache.x_final, p.lnf_g, p.lnf_b, cache.lnf);
    cache.logits = matmul(cache.f, p.w_out);
}

}  // namespace

ForwardTrace TinyModel::forward(const std::vector<int>& token_ids) const {
    check_input(token_ids);
    FullCache cache;
    ForwardTrace trace;
    run_forward(config_, params_, token_ids, cache, &trace.hidden);
    trace.logits = std::move(cache.logits);
    trace.attention.resize(config_.layers);
    for (size_t l = 0; l < config_.layers; ++l)
        trace.attention[l] = std::move(cache.layers[l].att);
    return trace;
}

TrainStepLosses TinyModel::loss_and_grad(const TrainStep& step, TinyParams* grads) const {
    check_input(step.ids);
    if (step.lambda < 0.0 || step.lambda > 1.0)
        throw Error(ErrorKind::contract, "lambda must lie in [0,1]");
    size_t T = step.ids.size();
    for (size_t pos : step.conflict_positions)
        if (pos >= T)
            throw Error(ErrorKind::contract,
                        "conflict position " + std::to_string(pos) +
                            " out of range for sequence of length " + std::to_string(T));

    FullCache cache;
    run_forward(config_, params_, step.ids, cache, nullptr);

    size_t d = config_.model_dim;
    size_t H = config_.heads;
    size_t hd = d / H;
    double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    // --- language-modeling loss over the configured mask ---
    size_t mask_begin = step.full_sequence_mask
                            ? 0
                            : (step.answer_start == 0 ? 0 : step.answer_start - 1);
    std::vector<size_t> lm_positions;
    for (size_t t = mask_begin; t + 1 < T; ++t) lm_positions.push_back(t);

    TrainStepLosses losses;
    Mat dlogits(T, config_.vocab_size);
    if (!lm_positions.empty()) {
        double total = 0.0;
        double w = (1.0 - step.lambda) / static_cast<double>(lm_positions.size());
        for (size_t t : lm_positions) {
            // stable log-softmax
            double max_v = -std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < config_.vocab_size; ++j)
                max_v = std::max(max_v, cache.logits(t, j));
            double denom = 0.0;
            for (size_t j = 0; j < config_.vocab_size; ++j)
                denom += std::exp(cache.logits(t, j) - max_v);
            size_t target = static_cast<size_t>(step.ids[t + 1]);
            double logp = cache.logits(t, target) - max_v - std::log(denom);
            total -= logp;
            if (grads) {
                for (size_t j = 0; j < config_.vocab_size; ++j) {
                    double pj = std::exp(cache.logits(t, j) - max_v) / denom;
                    dlogits(t, j) = w * (pj - (j == target ? 1.0 : 0.0));
                }
            }
        }
        losses.l_lm = total / static_cast<double>(lm_positions.size());
    }

    // --- attention-guidance loss over pair set P ---
    std::vector<int> agg_layers = step.aggregation.resolve(config_.layers);
    std::vector<char> layer_selected(config_.layers, 0);
    for (int l : agg_layers) layer_selected[static_cast<size_t>(l)] = 1;
    size_t n_agg = agg_layers.size() * H;

    size_t pair_count = 0;
    for (size_t j : step.conflict_positions) pair_count += T - j;
    if (pair_count > 0) {
        double sum = 0.0;
        for (size_t j : step.conflict_positions) {
            for (size_t i = j; i < T; ++i) {
                double abar = 0.0;
                for (int l : agg_layers)
                    for (size_t h = 0; h < H; ++h)
                        abar += cache.layers[static_cast<size_t>(l)].att[h](i, j);
                abar /= static_cast<double>(n_agg);
                sum += 1.0 - abar;
            }
        }
        losses.l_attn = sum / static_cast<double>(pair_count);
    }

    if (!grads) return losses;

    double attn_seed =
        pair_count > 0
            ? -step.lambda / (static_cast<double>(pair_count) * static_cast<double>(n_agg))
            : 0.0;

    // --- backward ---
    Mat df = matmul_bt(dlogits, params_.w_out);
    add_at_b(grads->w_out, cache.f, dlogits);
    Mat dx = layer_norm_backward(df, params_.lnf_g, cache.lnf, grads->lnf_g, grads->lnf_b);

    for (size_t li = config_.layers; li-- > 0;) {
        const LayerCache& lc = cache.layers[li];
        const TinyLayerParams& lp = params_.layers[li];
        TinyLayerParams& gl = grads->layers[li];

        // MLP block: x_out = x_mid + (gelu(m W1 + b1) W2 + b2)
        Mat dy = dx;  // gradient wrt y (and wrt x_mid via residual)
        add_at_b(gl.w2, lc.gact, dy);
        add_rowwise(gl.b2, dy);
        Mat dgact = matmul_bt(dy, lp.w2);
        Mat du(T, 4 * d);
        for (size_t i = 0; i < du.size(); ++i)
            du.a[i] = dgact.a[i] * gelu_grad(lc.u.a[i]);
        add_at_b(gl.w1, lc.m, du);
        add_rowwise(gl.b1, du);
        Mat dm = matmul_bt(du, lp.w1);
        Mat dx_mid = layer_norm_backward(dm, lp.ln2_g, lc.ln2, gl.ln2_g, gl.ln2_b);
        for (size_t i = 0; i < dx_mid.size(); ++i) dx_mid.a[i] += dx.a[i];

        // attention block: x_mid = x_in + (ctx Wo)
        Mat dattn_out = dx_mid;
        Mat dctx = matmul_bt(dattn_out, lp.wo);
        add_at_b(gl.wo, lc.ctx, dattn_out);

        Mat dq(T, d), dk(T, d), dv(T, d);
        for (size_t h = 0; h < H; ++h) {
            size_t off = h * hd;
            const Mat& A = lc.att[h];
            for (size_t i = 0; i < T; ++i) {
                // dA from the context path, plus the direct guidance term
                std::vector<double> dA(i + 1, 0.0);
                for (size_t j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (size_t c = 0; c < hd; ++c)
                        s += dctx(i, off + c) * lc.v(j, off + c);
                    dA[j] = s;
                }
                if (layer_selected[li] && attn_seed != 0.0) {
                    for (size_t j : step.conflict_positions)
                        if (j <= i) dA[j] += attn_seed;
                }
                // softmax backward for this row
                double dot = 0.0;
                for (size_t j = 0; j <= i; ++j) dot += A(i, j) * dA[j];
                for (size_t j = 0; j <= i; ++j) {
                    double dscore = A(i, j) * (dA[j] - dot);
                    if (dscore == 0.0) continue;
                    for (size_t c = 0; c < hd; ++c) {
                        dq(i, off + c) += dscore * lc.k(j, off + c) * inv_sqrt_hd;
                        dk(j, off + c) += dscore * lc.q(i, off + c) * inv_sqrt_hd;
                    }
                }
                // dv from the context path
                for (size_t j = 0; j <= i; ++j) {
                    double w = A(i, j);
                    if (w == 0.0) continue;
                    for (size_t c = 0; c < hd; ++c)
                        dv(j, off + c) += w * dctx(i, off + c);
                }
            }
        }

        add_at_b(gl.wq, lc.a, dq);
        add_at_b(gl.wk, lc.a, dk);
        add_at_b(gl.wv, lc.a, dv);
        Mat da = matmul_bt(dq, lp.wq);
        {
            Mat da_k = matmul_bt(dk, lp.wk);
            Mat da_v = matmul_bt(dv, lp.wv);
            for (size_t i = 0; i < da.size(); ++i) da.a[i] += da_k.a[i] + da_v.a[i];
        }
        Mat dx_in = layer_norm_backward(da, lp.ln1_g, lc.ln1, gl.ln1_g, gl.ln1_b);
        for (size_t i = 0; i < dx_in.size(); ++i) dx_in.a[i] += dx_mid.a[i];
        dx = std::move(dx_in);
    }

    for (size_t t = 0; t < T; ++t) {
        size_t row = static_cast<size_t>(step.ids[t]);
        for (size_t j = 0; j < d; ++j) {
            grads->tok_emb(row, j) += dx(t, j);
            grads->pos_emb(t, j) += dx(t, j);
        }
    }
    return losses;
}

uint64_t TinyModel::param_checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, m] : named_params()) {
        h ^= fnv1a64(name);
        h *= 0x100000001b3ULL;
        for (double v : m->a) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            h ^= bits;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

namespace {

constexpr char kCkptMagic[8] = {'C', 'L', 'R', 'T', 'I', 'N', 'Y', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(ErrorKind::parse, "truncated checkpoint");
}

}  // namespace

void TinyModel::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::config, "cannot write checkpoint: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    json header = {
        {"vocab_size", config_.vocab_size}, {"layers", config_.layers},
        {"heads", config_.heads},           {"model_dim", config_.model_dim},
        {"max_seq_len", config_.max_seq_len}, {"seed", config_.seed},
        {"vocab", tokenizer_.vocab()},
    };
    std::string hs = header.dump();
    write_pod(out, static_cast<uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    auto tensors = named_params();
    write_pod(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        write_pod(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<uint32_t>(m->rows));
        write_pod(out, static_cast<uint32_t>(m->cols));
        out.write(reinterpret_cast<const char*>(m->a.data()),
                  static_cast<std::streamsize>(m->a.size() * sizeof(double)));
    }
    if (!out) throw Error(ErrorKind::config, "checkpoint write failed: " + path);
}

TinyModel TinyModel::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::config, "cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw Error(ErrorKind::parse, "not a model checkpoint: " + path);
    uint32_t hlen = 0;
    read_pod(in, hlen);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw Error(ErrorKind::parse, "truncated checkpoint header");
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("corrupt checkpoint header: ") + e.what());
    }
    TinyModelConfig cfg;
    cfg.vocab_size = header.at("vocab_size").get<size_t>();
    cfg.layers = header.at("layers").get<size_t>();
    cfg.heads = header.at("heads").get<size_t>();
    cfg.model_dim = header.at("model_dim").get<size_t>();
    cfg.max_seq_len = header.at("max_seq_len").get<size_t>();
    cfg.seed = header.at("seed").get<uint64_t>();
    Tokenizer tok = Tokenizer::from_vocab(header.at("vocab").get<std::vector<std::string>>());

    TinyModel model(cfg, std::move(tok));
    uint32_t n_tensors = 0;
    read_pod(in, n_tensors);
    auto tensors = model.named_params();
    if (n_tensors != tensors.size())
        throw Error(ErrorKind::parse, "checkpoint tensor count mismatch");
    for (auto& [expected_name, m] : tensors) {
        uint32_t nlen = 0;
        read_pod(in, nlen);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        uint32_t rows = 0, cols = 0;
        read_pod(in, rows);
        read_pod(in, cols);
        if (name != expected_name || rows != m->rows || cols != m->cols)
            throw Error(ErrorKind::parse, "checkpoint tensor '" + name +
                                              "' does not match expected '" +
                                              expected_name + "' shape");
        in.read(reinterpret_cast<char*>(m->a.data()),
                static_cast<std::streamsize>(m->a.size() * sizeof(double)));
        if (!in) throw Error(ErrorKind::parse, "truncated checkpoint tensor data");
    }
    return model;
}

}  // namespace clear
