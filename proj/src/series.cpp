#include "oraclead/series.hpp"

#include <cmath>

namespace oraclead {

Standardizer fit_standardizer(const RawSeries& train) {
    const std::size_t t = train.timesteps();
    const std::size_t n = train.n_vars();
    require(t >= 1, "fit_standardizer: empty series");

    Standardizer s;
    s.mean.assign(n, 0.0);
    s.std.assign(n, 0.0);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < n; ++c) s.mean[c] += train.values.at(r, c);
    for (std::size_t c = 0; c < n; ++c) s.mean[c] /= static_cast<double>(t);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            const double d = train.values.at(r, c) - s.mean[c];
            s.std[c] += d * d;
        }
    for (std::size_t c = 0; c < n; ++c) {
        s.std[c] = std::sqrt(s.std[c] / static_cast<double>(t));  // population std
        if (s.std[c] < 1e-8) s.std[c] = 1.0;                      // constant-channel guard
    }
    return s;
}

RawSeries apply_standardizer(const Standardizer& s, const RawSeries& x) {
    require(s.mean.size() == x.n_vars(), "apply_standardizer: dimension mismatch");
    RawSeries out;
    out.variable_names = x.variable_names;
    out.labels = x.labels;
    out.values = Mat(x.timesteps(), x.n_vars());
    for (std::size_t r = 0; r < x.timesteps(); ++r)
        for (std::size_t c = 0; c < x.n_vars(); ++c)
            out.values.at(r, c) = (x.values.at(r, c) - s.mean[c]) / s.std[c];
    return out;
}

std::vector<Window> make_windows(const RawSeries& x, std::size_t window_len, std::size_t stride) {
    require(window_len >= 2, "make_windows: window length must be >= 2");
    require(stride >= 1, "make_windows: stride must be >= 1");
    require(x.timesteps() >= window_len,
            "make_windows: series length " + std::to_string(x.timesteps()) + " is shorter than window " +
                std::to_string(window_len));

    const std::size_t n = x.n_vars();
    const std::size_t count = (x.timesteps() - window_len) / stride + 1;
    std::vector<Window> out;
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        Window win;
        win.origin_index = window_len - 1 + w * stride;
        win.past = Mat(window_len - 1, n);
        win.target.resize(n);
        const std::size_t start = win.origin_index - (window_len - 1);
        for (std::size_t r = 0; r < window_len - 1; ++r)
            for (std::size_t c = 0; c < n; ++c) win.past.at(r, c) = x.values.at(start + r, c);
        for (std::size_t c = 0; c < n; ++c) win.target[c] = x.values.at(win.origin_index, c);
        out.push_back(std::move(win));
    }
    return out;
}

}  // namespace oraclead
