#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "coalesce/autodiff.hpp"
#include "gradcheck.hpp"

using namespace coalesce;
using namespace coalesce::testing;

namespace {

// Fixed random linear functional makes per-element gradient errors visible.
template <typename T>
typename Tape<T>::Var probe(Tape<T>& t, typename Tape<T>::Var y, uint64_t seed) {
    Rng rng(seed);
    Arr<T> w = random_arr<T>(t.val(y).shape, rng, -1, 1);
    return t.reduce_sum(t.mul(y, t.constant(w)));
}

// Runs one op builder through gradcheck in both scalar widths.
template <typename Builder>
void check_op(const char* name, Builder build, std::vector<size_t> shape, uint64_t seed,
              double lo = -1, double hi = 1, bool spaced = false) {
    INFO("op: " << std::string(name) << ", seed " << seed);
    Rng rng(seed * 7919 + 13);
    Arr<double> xd = spaced ? spaced_arr<double>(shape, rng, lo, hi)
                            : random_arr<double>(shape, rng, lo, hi);
    Arr<float> xf(xd.shape);
    for (size_t i = 0; i < xd.size(); ++i) xf.v[i] = float(xd.v[i]);

    auto build_d = [&](Tape<double>& t, Tape<double>::Var x) { return build(t, x, seed); };
    auto build_f = [&](Tape<float>& t, Tape<float>::Var x) { return build(t, x, seed); };
    auto cd = gradcheck<double>(xd, build_d, 99, 1e-4);
    CHECK(cd.pass(1e-6));
    auto cf = gradcheck<float>(xf, build_f, 99, 0.01f);
    INFO("float rel " << cf.rel_worst << " abs " << cf.abs_worst);
    CHECK(cf.pass(1e-3f));
}

// A generic op builder works for both tape widths.
#define OP(expr)                                                     \
    [](auto& t, auto x, uint64_t s) {                                \
        using T = std::decay_t<decltype(t.val(x).v[0])>;             \
        Rng rng2(s + 555);                                           \
        (void)rng2;                                                  \
        (void)sizeof(T);                                             \
        return (expr);                                               \
    }
#define RAND(...) t.constant(random_arr<T>(__VA_ARGS__, rng2))

}  // namespace

TEST_CASE("tape op values") {
    Tape<double> t;
    auto s = t.sigmoid(t.scalar(0.0));
    CHECK(t.scalar_val(s) == doctest::Approx(0.5));

    auto x = t.leaf(Arr<double>({1}, {3.0}), true);
    auto y = t.mul(x, x);
    t.backward(y);
    CHECK(t.grad(x).v[0] == doctest::Approx(6.0));
}

TEST_CASE("shape mismatch errors name both shapes") {
    Tape<double> t;
    auto a = t.constant(Arr<double>({2, 3}));
    auto b = t.constant(Arr<double>({3, 2}));
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("(2, 3)"), std::runtime_error);
    CHECK_THROWS_WITH_AS(t.matmul(a, a), doctest::Contains("incompatible"), std::runtime_error);
}

TEST_CASE("registered ops match central finite differences, 20 seeds") {
    using SV = std::vector<size_t>;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        check_op("add", OP(t.add(x, RAND({4, 5}))), SV{4, 5}, seed);
        check_op("sub", OP(t.sub(x, RAND({4, 5}))), SV{4, 5}, seed);
        check_op("mul", OP(t.mul(x, RAND({4, 5}))), SV{4, 5}, seed);
        check_op("scale", OP(t.scale(x, T(1.7))), SV{4, 5}, seed);
        check_op("add_const", OP(t.add_const(x, T(0.3))), SV{4, 5}, seed);
        check_op("relu", OP(t.relu(x)), SV{4, 5}, seed, 0.1, 1.0);
        check_op("leaky_relu", OP(t.leaky_relu(x, T(0.02))), SV{4, 5}, seed, -1.0, -0.1);
        check_op("sigmoid", OP(t.sigmoid(x)), SV{4, 5}, seed, -2, 2);
        check_op("exp", OP(t.exp(x)), SV{4, 5}, seed);
        check_op("sqrt", OP(t.sqrt_op(x)), SV{4, 5}, seed, 0.5, 2.0);
        check_op("abs", OP(t.abs_op(x)), SV{4, 5}, seed, 0.2, 1.0);
        check_op("square", OP(t.square(x)), SV{4, 5}, seed);
        check_op("matmul_lhs", OP(t.matmul(x, RAND({5, 3}))), SV{4, 5}, seed);
        check_op("matmul_rhs", OP(t.matmul(RAND({3, 4}), x)), SV{4, 5}, seed);
        check_op("add_bias_a", OP(t.add_bias(x, RAND({5}))), SV{4, 5}, seed);
        check_op("add_bias_b", OP(t.add_bias(RAND({6, 5}), x)), SV{5}, seed);
        check_op("concat_cols", OP(t.concat_cols(x, RAND({4, 2}))), SV{4, 5}, seed);
        check_op("concat_rows", OP(t.concat_rows(RAND({2, 5}), x)), SV{4, 5}, seed);
        check_op("max_axis0", OP(t.max_over_axis(x, 0)), SV{4, 5}, seed, -1, 1, true);
        check_op("max_axis1", OP(t.max_over_axis(x, 1)), SV{4, 5}, seed, -1, 1, true);
        check_op("group_max", OP(t.group_max(x, 3)), SV{6, 5}, seed, -1, 1, true);
        check_op("group_max_ragged", OP(t.group_max_ragged(x, {0, 2, 6})), SV{6, 5}, seed, -1, 1, true);
        check_op("sum_axis0", OP(t.sum_over_axis(x, 0)), SV{4, 5}, seed);
        check_op("sum_axis1", OP(t.sum_over_axis(x, 1)), SV{4, 5}, seed);
        check_op("reduce_mean", OP(t.reduce_mean(x)), SV{4, 5}, seed);
        check_op("reduce_sum", OP(t.reduce_sum(x)), SV{4, 5}, seed);
        check_op("gather_rows", OP(t.gather_rows(x, {2, 0, 2, 1, 3, 2})), SV{4, 5}, seed);
        check_op("mul_scalar_a", OP(t.mul_scalar(x, t.constant(random_arr<T>({1}, rng2)))), SV{4, 5}, seed);
        check_op("mul_scalar_s", OP(t.mul_scalar(RAND({4, 5}), x)), SV{1}, seed);
        check_op("slice_cols", OP(t.slice_cols(x, 1, 3)), SV{4, 5}, seed);
        check_op("reshape", OP(t.reshape(x, {2, 10})), SV{4, 5}, seed);
        check_op("reciprocal", OP(t.reciprocal(x)), SV{4, 5}, seed, 0.5, 2.0);
    }
}

namespace {

// Flattens a param store into one vector (name order, which is sorted).
template <typename T>
Arr<T> flatten_params(const ParamStore<T>& store) {
    size_t total = 0;
    for (auto& [n, a] : store.params) total += a.size();
    Arr<T> flat({total});
    size_t o = 0;
    for (auto& [n, a] : store.params) {
        std::copy(a.v.begin(), a.v.end(), flat.v.begin() + o);
        o += a.size();
    }
    return flat;
}

template <typename T, typename U>
ParamStore<T> unflatten_params(const ParamStore<T>& like, const Arr<U>& flat) {
    ParamStore<T> s = like;
    size_t o = 0;
    for (auto& [n, a] : s.params) {
        for (size_t i = 0; i < a.size(); ++i) a.v[i] = T(flat.v[o + i]);
        o += a.size();
    }
    return s;
}

// Gradient check of a 5-layer MLP via a flattened parameter vector. The
// numeric oracle always evaluates in double; the analytic gradient runs in T.
template <typename T>
void mlp_gradcheck(uint64_t seed, double h, T tol) {
    const std::vector<size_t> widths{5, 8, 7, 6, 5, 1};
    // pick a fixture whose hidden preactivations stay clear of the leaky-relu
    // kink, so the finite differences probe a smooth region
    uint64_t sub = 0;
    ParamStore<T> store;
    Arr<double> input_d({3, 5});
    for (;; ++sub) {
        store = ParamStore<T>{};
        Rng rng(seed * 1000 + sub);
        init_mlp(store, "net", widths, rng);
        Rng rin((seed * 1000 + sub) ^ 0xabcd);
        input_d = random_arr<double>({3, 5}, rin);
        ParamStore<double> sd;
        for (auto& [n, a] : store.params) {
            Arr<double> d(a.shape);
            for (size_t i = 0; i < a.size(); ++i) d.v[i] = double(a.v[i]);
            sd.params[n] = std::move(d);
        }
        Tape<double> t;
        auto vs = mlp_leaves(t, sd, "net", false);
        bool clean = true;
        auto x = t.constant(input_d);
        typename Tape<double>::Var cur = x;
        for (size_t l = 0; l < vs.w.size(); ++l) {
            cur = t.add_bias(t.matmul(cur, vs.w[l]), vs.b[l]);
            if (l + 1 < vs.w.size())
                for (double z : t.val(cur).v) clean = clean && std::abs(z) > 1e-3;
            if (l + 1 < vs.w.size()) cur = t.leaky_relu(cur, 0.02);
        }
        if (clean) break;
    }
    Rng rin(seed ^ 0xabcd);
    (void)rin;
    Arr<T> input(input_d.shape);
    for (size_t i = 0; i < input.size(); ++i) input.v[i] = T(input_d.v[i]);
    Rng rw(seed ^ 0x1234);
    Arr<double> w_d = random_arr<double>({3, 1}, rw);
    Arr<T> w(w_d.shape);
    for (size_t i = 0; i < w.size(); ++i) w.v[i] = T(w_d.v[i]);

    // analytic gradient in T
    Tape<T> tape;
    auto vars = mlp_leaves(tape, store, "net", true);
    auto out = mlp_forward(tape, vars.w, vars.b, tape.constant(input), Act::LeakyRelu, Act::Sigmoid);
    tape.backward(tape.reduce_sum(tape.mul(out, tape.constant(w))));
    ParamStore<T> gradstore = store;
    {
        for (size_t li = 0; li < vars.w.size(); ++li) {
            gradstore.at("net/w" + std::to_string(li)) = tape.grad(vars.w[li]);
            gradstore.at("net/b" + std::to_string(li)) = tape.grad(vars.b[li]);
        }
    }
    Arr<T> analytic = flatten_params(gradstore);
    Arr<T> flat = flatten_params(store);

    ParamStore<double> store_d;
    for (auto& [n, a] : store.params) {
        Arr<double> d(a.shape);
        for (size_t i = 0; i < a.size(); ++i) d.v[i] = double(a.v[i]);
        store_d.params[n] = std::move(d);
    }
    auto eval = [&](const Arr<T>& theta) {
        ParamStore<double> s = unflatten_params(store_d, theta);
        Tape<double> t;
        auto vs = mlp_leaves(t, s, "net", false);
        auto o = mlp_forward(t, vs.w, vs.b, t.constant(input_d), Act::LeakyRelu, Act::Sigmoid);
        double acc = 0;
        const auto& yv = t.val(o);
        for (size_t i = 0; i < yv.size(); ++i) acc += w_d.v[i] * yv.v[i];
        return acc;
    };

    GradCompare<T> cmp;
    cmp.init_scale(analytic.v);
    Arr<T> theta = flat;
    for (size_t i = 0; i < flat.size(); ++i) {
        T orig = flat.v[i];
        T hp = T(double(orig) + h), hm = T(double(orig) - h);
        theta.v[i] = hp;
        double fp = eval(theta);
        theta.v[i] = hm;
        double fm = eval(theta);
        theta.v[i] = orig;
        cmp.add(analytic.v[i], T((fp - fm) / (double(hp) - double(hm))));
    }
    CHECK(cmp.pass(tol));
}

}  // namespace

TEST_CASE("5-layer random MLP gradient check, 20 seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        mlp_gradcheck<double>(seed, 1e-4, 1e-6);
        mlp_gradcheck<float>(seed, 1e-4, 1e-3f);
    }
}

TEST_CASE("max pooling ties route gradient to the first index") {
    Tape<double> t;
    auto x = t.leaf(Arr<double>({3, 2}, {0.5, 1.0, 0.5, 2.0, 0.5, 2.0}), true);
    auto m = t.max_over_axis(x, 0);
    t.backward(t.reduce_sum(m));
    // column 0: all rows tie at 0.5 -> row 0; column 1: rows 1, 2 tie -> row 1
    CHECK(t.grad(x).v == std::vector<double>{1, 0, 0, 1, 0, 0});
}

TEST_CASE("adam first step with unit gradient moves by -lr") {
    ParamStore<double> store;
    store.params["p"] = Arr<double>({3}, {1.0, -2.0, 0.5});
    AdamState<double> st;
    st.lr = 0.01;
    std::map<std::string, Arr<double>> grads;
    grads["p"] = Arr<double>({3}, {1.0, 1.0, 1.0});
    adam_step(store, grads, st);
    const double expect[3] = {1.0, -2.0, 0.5};
    for (int i = 0; i < 3; ++i) CHECK(std::abs(store.at("p").v[i] - expect[i] + st.lr) < 1e-6);
}

TEST_CASE("adam with zero gradients never moves parameters") {
    ParamStore<double> store;
    store.params["p"] = Arr<double>({2}, {3.0, 4.0});
    AdamState<double> st;
    std::map<std::string, Arr<double>> grads;
    grads["p"] = Arr<double>({2});
    for (int i = 0; i < 50; ++i) adam_step(store, grads, st);
    CHECK(store.at("p").v[0] == 3.0);
    CHECK(store.at("p").v[1] == 4.0);
}

TEST_CASE("adam minimizes (x-2)^2") {
    ParamStore<double> store;
    store.params["x"] = Arr<double>({1}, {0.0});
    AdamState<double> st;
    st.lr = 0.1;
    for (int i = 0; i < 500; ++i) {
        double x = store.at("x").v[0];
        std::map<std::string, Arr<double>> grads;
        grads["x"] = Arr<double>({1}, {2 * (x - 2)});
        adam_step(store, grads, st);
    }
    CHECK(std::abs(store.at("x").v[0] - 2.0) < 1e-3);
}

TEST_CASE("adam is scale-equivariant in lr on the first step") {
    Rng rng(3);
    Arr<double> g = random_arr<double>({16}, rng);
    auto delta_for = [&](double lr) {
        ParamStore<double> store;
        store.params["p"] = Arr<double>({16});
        AdamState<double> st;
        st.lr = lr;
        std::map<std::string, Arr<double>> grads;
        grads["p"] = g;
        adam_step(store, grads, st);
        return store.at("p");
    };
    Arr<double> d1 = delta_for(0.01), d2 = delta_for(0.02);
    for (size_t i = 0; i < 16; ++i) CHECK(std::abs(2 * d1.v[i] - d2.v[i]) < 1e-9);
}

TEST_CASE("adam rejects non-finite gradients") {
    ParamStore<double> store;
    store.params["p"] = Arr<double>({1}, {0.0});
    AdamState<double> st;
    std::map<std::string, Arr<double>> grads;
    grads["p"] = Arr<double>({1}, {std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(adam_step(store, grads, st), std::runtime_error);
}

TEST_CASE("identity-initialized single linear layer is the identity") {
    Tape<double> t;
    Arr<double> eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.v[i * 3 + i] = 1;
    auto w = t.constant(eye);
    auto b = t.constant(Arr<double>({3}));
    Arr<double> in({2, 3}, {0.1, -0.4, 2.0, 0.7, 0.0, -1.0});
    auto out = mlp_forward(t, {w}, {b}, t.constant(in), Act::None, Act::None);
    CHECK(t.val(out).v == in.v);
}

TEST_CASE("mlp zero weights with sigmoid output gives 0.5") {
    ParamStore<double> store;
    Rng rng(1);
    init_mlp(store, "m", {3, 4, 1}, rng);
    for (auto& [n, a] : store.params)
        for (auto& x : a.v) x = 0;
    Tape<double> t;
    auto vars = mlp_leaves(t, store, "m", false);
    Rng rin(2);
    auto out = mlp_forward(t, vars.w, vars.b, t.constant(random_arr<double>({5, 3}, rin)),
                           Act::LeakyRelu, Act::Sigmoid);
    for (double v : t.val(out).v) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("mlp width mismatch error") {
    ParamStore<double> store;
    Rng rng(1);
    init_mlp(store, "m", {3, 4, 1}, rng);
    Tape<double> t;
    auto vars = mlp_leaves(t, store, "m", false);
    Rng rin(2);
    CHECK_THROWS_WITH_AS(mlp_forward(t, vars.w, vars.b, t.constant(random_arr<double>({5, 7}, rin)),
                                     Act::LeakyRelu, Act::None),
                         doctest::Contains("width mismatch"), std::runtime_error);
}

TEST_CASE("checkpoint round trip, including f32<->f64 conversion") {
    ParamStore<float> store;
    Rng rng(9);
    init_mlp(store, "enc_A/sa0", {3, 16, 16}, rng);
    store.params["dec/w0"] = random_arr<float>({7, 3}, rng);
    auto path = (std::filesystem::temp_directory_path() / "ck.clsc").string();
    save_checkpoint(path, store);

    ParamStore<float> back;
    load_checkpoint(path, back);
    REQUIRE(back.params.size() == store.params.size());
    for (auto& [n, a] : store.params) {
        REQUIRE(back.has(n));
        CHECK(back.at(n).shape == a.shape);
        CHECK(back.at(n).v == a.v);
    }

    ParamStore<double> wide;
    load_checkpoint(path, wide);
    CHECK(wide.at("dec/w0").v[0] == doctest::Approx(double(store.at("dec/w0").v[0])));

    CHECK(checkpoint_exists(path));
    CHECK(!checkpoint_exists(path + ".missing"));
}
