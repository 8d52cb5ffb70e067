#include "confikd/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "confikd/rng.hpp"

namespace confikd {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp_vec(const Vec& v) {
    double mx = kNegInf;
    for (double x : v) mx = std::max(mx, x);
    if (mx == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}
}  // namespace

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::val_restricted: return "val_restricted";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "val_restricted") return Split::val_restricted;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split: " + s);
}

std::string GroupKey::str() const {
    std::string s = "c" + std::to_string(cls) + ":";
    for (int b : bits) s += char('0' + b);
    return s;
}

WorldSpec WorldSpec::celeba_toy(int spurious_bits) {
    WorldSpec w;
    w.num_classes = 2;
    w.num_spurious_bits = spurious_bits;
    w.input_dim = 2 + spurious_bits;
    w.latent_dim = w.input_dim;
    w.class_scale = 1.0;
    w.spurious_scale = 1.0;
    w.noise_std = 0.45;
    for (int c = 0; c < 2; ++c) {
        Vec e(w.input_dim, 0.0);
        e[c] = 1.0;
        w.class_directions.push_back(e);
    }
    for (int j = 0; j < spurious_bits; ++j) {
        Vec e(w.input_dim, 0.0);
        e[2 + j] = 1.0;
        w.spurious_directions.push_back(e);
    }
    const int K = w.num_groups();
    w.train_priors.assign(K, 0.0);
    w.test_priors.assign(K, 1.0 / K);
    const int all_bits = (1 << spurious_bits) - 1;
    // aligned groups only: class 0 with all bits clear, class 1 with all set
    w.train_priors[0 * (1 << spurious_bits) + 0] = 0.5;
    w.train_priors[1 * (1 << spurious_bits) + all_bits] = 0.5;
    return w;
}

World::World(WorldSpec spec, std::uint64_t /*seed*/) : spec_(std::move(spec)) {
    const int L = spec_.num_classes;
    const int k = spec_.num_spurious_bits;
    const int d = spec_.input_dim;
    const int K = spec_.num_groups();

    if (L < 1 || k < 0 || d < 1) throw std::invalid_argument("make_world: invalid dimensions");
    if ((int)spec_.class_directions.size() != L || (int)spec_.spurious_directions.size() != k)
        throw std::invalid_argument("make_world: direction count mismatch");
    if (spec_.noise_std <= 0.0 || spec_.class_scale <= 0.0 || spec_.spurious_scale < 0.0)
        throw std::invalid_argument("make_world: scales must be positive");

    std::vector<const Vec*> dirs;
    for (const auto& v : spec_.class_directions) dirs.push_back(&v);
    for (const auto& v : spec_.spurious_directions) dirs.push_back(&v);
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        if ((int)dirs[i]->size() != d) throw std::invalid_argument("make_world: direction dim mismatch");
        for (std::size_t j = 0; j <= i; ++j) {
            const double expect = (i == j) ? 1.0 : 0.0;
            if (std::fabs(dot(*dirs[i], *dirs[j]) - expect) > 1e-10)
                throw std::invalid_argument("make_world: directions not orthonormal");
        }
    }

    auto check_priors = [K](const Vec& p, const char* which) {
        if ((int)p.size() != K) throw std::invalid_argument(std::string("make_world: ") + which + " priors size");
        double s = 0.0;
        for (double v : p) {
            if (v < 0.0) throw std::invalid_argument(std::string("make_world: negative ") + which + " prior");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-9)
            throw std::invalid_argument(std::string("make_world: ") + which + " priors do not sum to 1");
    };
    check_priors(spec_.train_priors, "train");
    check_priors(spec_.test_priors, "test");

    groups_.resize(K);
    for (int g = 0; g < K; ++g) {
        const int cls = g >> k;
        const int bits = g & ((1 << k) - 1);
        Group& grp = groups_[g];
        grp.key.cls = cls;
        grp.key.bits.resize(k);
        grp.mean = scale(spec_.class_directions[cls], spec_.class_scale);
        for (int j = 0; j < k; ++j) {
            grp.key.bits[j] = (bits >> j) & 1;
            if (grp.key.bits[j])
                grp.mean = add(grp.mean, scale(spec_.spurious_directions[j], spec_.spurious_scale));
        }
        grp.train_prior = spec_.train_priors[g];
        grp.test_prior = spec_.test_priors[g];
    }

    restricted_priors_.assign(K, 0.0);
    double mass = 0.0;
    for (int g = 0; g < K; ++g)
        if (groups_[g].train_prior > 0.0) {
            restricted_priors_[g] = groups_[g].test_prior;
            mass += groups_[g].test_prior;
        }
    if (mass > 0.0)
        for (auto& v : restricted_priors_) v /= mass;
}

World make_world(const WorldSpec& spec, std::uint64_t seed) { return World(spec, seed); }

int World::group_index(const GroupKey& key) const {
    for (std::size_t g = 0; g < groups_.size(); ++g)
        if (groups_[g].key == key) return (int)g;
    return -1;
}

const Vec& World::priors(Split split) const {
    switch (split) {
        case Split::train: return spec_.train_priors;
        case Split::val_restricted: return restricted_priors_;
        default: return spec_.test_priors;
    }
}

Vec World::log_bayes_posterior(const Vec& x, Split split) const {
    if ((int)x.size() != spec_.input_dim)
        throw std::invalid_argument("bayes_posterior: input dim mismatch");
    const Vec& pri = priors(split);
    const double inv2v = 1.0 / (2.0 * spec_.noise_std * spec_.noise_std);
    Vec class_logmass(spec_.num_classes, kNegInf);
    std::vector<Vec> per_class(spec_.num_classes);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        if (pri[g] <= 0.0) continue;
        Vec r = sub(x, groups_[g].mean);
        const double lw = std::log(pri[g]) - dot(r, r) * inv2v;
        per_class[groups_[g].key.cls].push_back(lw);
    }
    for (int c = 0; c < spec_.num_classes; ++c)
        if (!per_class[c].empty()) class_logmass[c] = logsumexp_vec(per_class[c]);
    const double total = logsumexp_vec(class_logmass);
    Vec out(spec_.num_classes);
    for (int c = 0; c < spec_.num_classes; ++c) out[c] = class_logmass[c] - total;
    return out;
}

Vec World::bayes_posterior(const Vec& x, Split split) const {
    Vec lp = log_bayes_posterior(x, split);
    for (auto& v : lp) v = std::exp(v);
    return lp;
}

GroupedDataset World::sample_split(Split split, std::size_t n, std::uint64_t seed,
                                   bool class_balanced) const {
    const Vec& pri = priors(split);
    Rng rng(seed);
    GroupedDataset ds;
    ds.tag = split;
    ds.examples.reserve(n);

    auto draw_from_group = [&](int g) {
        Example e;
        e.group = groups_[g].key;
        e.y = groups_[g].key.cls;
        e.x = groups_[g].mean;
        for (auto& v : e.x) v += spec_.noise_std * rng.gaussian();
        ds.examples.push_back(std::move(e));
    };

    if (!class_balanced) {
        for (std::size_t i = 0; i < n; ++i) draw_from_group((int)rng.categorical(pri));
    } else {
        const int L = spec_.num_classes;
        std::vector<Vec> within(L, Vec(groups_.size(), 0.0));
        std::vector<double> class_mass(L, 0.0);
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            within[groups_[g].key.cls][g] = pri[g];
            class_mass[groups_[g].key.cls] += pri[g];
        }
        for (int c = 0; c < L; ++c) {
            if (class_mass[c] <= 0.0)
                throw std::invalid_argument("sample_split: class-balanced draw from class with zero prior");
            std::size_t cnt = n / L + (std::size_t(c) < n % L ? 1 : 0);
            for (std::size_t i = 0; i < cnt; ++i) draw_from_group((int)rng.categorical(within[c]));
        }
    }
    return ds;
}

std::vector<Vec> World::sample_inputs(Split split, std::size_t n, std::uint64_t seed) const {
    GroupedDataset ds = sample_split(split, n, seed);
    std::vector<Vec> xs;
    xs.reserve(n);
    for (auto& e : ds.examples) xs.push_back(std::move(e.x));
    return xs;
}

namespace {
void check_prob_vector(const Vec& p) {
    double s = 0.0;
    for (double v : p) {
        if (!(v >= -1e-12) || v > 1.0 + 1e-9)
            throw std::invalid_argument("true_risk: classifier output is not a probability vector");
        s += v;
    }
    if (std::fabs(s - 1.0) > 1e-6)
        throw std::invalid_argument("true_risk: classifier output does not sum to 1");
}

double clamped_neglog(double p) { return -std::log(std::max(p, 1e-300)); }

RiskEstimate mc_mean(const std::vector<double>& vals) {
    RiskEstimate r;
    r.n = vals.size();
    double s = 0.0;
    for (double v : vals) s += v;
    r.value = s / (double)r.n;
    double var = 0.0;
    for (double v : vals) var += (v - r.value) * (v - r.value);
    if (r.n > 1) var /= (double)(r.n - 1);
    r.std_error = std::sqrt(var / (double)r.n);
    return r;
}
}  // namespace

RiskEstimate World::true_risk(const Classifier& f, Split split, RiskLoss loss,
                              std::size_t n_samples, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<double> vals;
    vals.reserve(n_samples);
    const Vec& pri = priors(split);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const int g = (int)rng.categorical(pri);
        Vec x = groups_[g].mean;
        for (auto& v : x) v += spec_.noise_std * rng.gaussian();
        Vec probs = f.predict_probs(x);
        check_prob_vector(probs);
        Vec ps = pstar(x);
        if (loss == RiskLoss::ce_vs_pstar) {
            double v = 0.0;
            for (std::size_t c = 0; c < probs.size(); ++c) v += ps[c] * clamped_neglog(probs[c]);
            vals.push_back(v);
        } else {
            const int y = (int)rng.categorical(ps);
            vals.push_back(clamped_neglog(probs[y]));
        }
    }
    return mc_mean(vals);
}

RiskEstimate World::true_distilled_risk(const Classifier& f, const Classifier& teacher, Split split,
                                        std::size_t n_samples, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<double> vals;
    vals.reserve(n_samples);
    const Vec& pri = priors(split);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const int g = (int)rng.categorical(pri);
        Vec x = groups_[g].mean;
        for (auto& v : x) v += spec_.noise_std * rng.gaussian();
        Vec probs = f.predict_probs(x);
        check_prob_vector(probs);
        Vec t = teacher.predict_probs(x);
        double v = 0.0;
        for (std::size_t c = 0; c < probs.size(); ++c) v += t[c] * clamped_neglog(probs[c]);
        vals.push_back(v);
    }
    return mc_mean(vals);
}

namespace {
// Composite Simpson over [-w, w] in standardized coordinates, refined until
// the doubling estimate stabilizes.
double simpson_gauss_1d(const std::function<double(double)>& h, double abs_tol) {
    const double w = 10.0;
    auto integrate = [&](std::size_t n) {
        const double step = 2.0 * w / (double)n;
        double s = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            const double u = -w + step * (double)i;
            const double phi = std::exp(-0.5 * u * u) * 0.3989422804014326779399461;
            double coef = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            s += coef * phi * h(u);
        }
        return s * step / 3.0;
    };
    double prev = integrate(128);
    for (std::size_t n = 256; n <= 16384; n *= 2) {
        const double cur = integrate(n);
        if (std::fabs(cur - prev) < abs_tol * 0.5) return cur;
        prev = cur;
    }
    return prev;
}
}  // namespace

double World::expectation_quadrature(const std::function<double(const Vec&)>& h, Split split,
                                     double abs_tol) const {
    const int d = spec_.input_dim;
    if (d > 2) throw std::invalid_argument("expectation_quadrature: input_dim must be <= 2");
    const Vec& pri = priors(split);
    double total = 0.0;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        if (pri[g] <= 0.0) continue;
        const Vec& mu = groups_[g].mean;
        const double sd = spec_.noise_std;
        double comp;
        if (d == 1) {
            comp = simpson_gauss_1d([&](double u) { return h({mu[0] + sd * u}); }, abs_tol);
        } else {
            comp = simpson_gauss_1d(
                [&](double u0) {
                    return simpson_gauss_1d(
                        [&](double u1) { return h({mu[0] + sd * u0, mu[1] + sd * u1}); }, abs_tol);
                },
                abs_tol);
        }
        total += pri[g] * comp;
    }
    return total;
}

double World::true_risk_quadrature(const Classifier& f, Split split, double abs_tol) const {
    return expectation_quadrature(
        [&](const Vec& x) {
            Vec probs = f.predict_probs(x);
            check_prob_vector(probs);
            Vec ps = pstar(x);
            double v = 0.0;
            for (std::size_t c = 0; c < probs.size(); ++c) v += ps[c] * clamped_neglog(probs[c]);
            return v;
        },
        split, abs_tol);
}

double World::posterior_discrepancy(std::size_t probes, std::uint64_t seed) const {
    double worst = 0.0;
    for (Split s : {Split::train, Split::test}) {
        auto xs = sample_inputs(s, probes / 2, derive_seed(seed, split_name(s)));
        for (const auto& x : xs) {
            Vec a = bayes_posterior(x, Split::train);
            Vec b = bayes_posterior(x, Split::test);
            for (std::size_t c = 0; c < a.size(); ++c)
                worst = std::max(worst, std::fabs(a[c] - b[c]));
        }
    }
    return worst;
}

// --- CSV ------------------------------------------------------------------

namespace {
void write_double(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}
}  // namespace

void write_dataset_csv(const GroupedDataset& ds, std::ostream& out) {
    out << "# schema: confikd.dataset.v1\n";
    const std::size_t d = ds.examples.empty() ? 0 : ds.examples[0].x.size();
    const std::size_t k = ds.examples.empty() ? 0 : ds.examples[0].group.bits.size();
    for (std::size_t i = 0; i < d; ++i) out << "x" << i << ",";
    out << "y";
    for (std::size_t j = 0; j < k; ++j) out << ",bit" << j;
    out << ",split\n";
    for (const auto& e : ds.examples) {
        for (double v : e.x) {
            write_double(out, v);
            out << ",";
        }
        out << e.y;
        for (int b : e.group.bits) out << "," << b;
        out << "," << split_name(ds.tag) << "\n";
    }
}

void write_dataset_csv(const GroupedDataset& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_dataset_csv(ds, f);
}

GroupedDataset read_dataset_csv(std::istream& in) {
    GroupedDataset ds;
    std::string line;
    std::vector<std::string> header;
    int xcols = 0, bitcols = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!have_header) {
            header = cells;
            for (const auto& h : header) {
                if (h.rfind("x", 0) == 0 && h.size() > 1 && isdigit((unsigned char)h[1])) ++xcols;
                if (h.rfind("bit", 0) == 0) ++bitcols;
            }
            have_header = true;
            continue;
        }
        Example e;
        e.x.resize(xcols);
        for (int i = 0; i < xcols; ++i) e.x[i] = std::stod(cells[i]);
        e.y = std::stoi(cells[xcols]);
        e.group.cls = e.y;
        e.group.bits.resize(bitcols);
        for (int j = 0; j < bitcols; ++j) e.group.bits[j] = std::stoi(cells[xcols + 1 + j]);
        ds.tag = split_from_name(cells[xcols + 1 + bitcols]);
        ds.examples.push_back(std::move(e));
    }
    return ds;
}

GroupedDataset read_dataset_csv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    return read_dataset_csv(f);
}

}  // namespace confikd
