#pragma once

// Confusion-matrix accumulation and per-class IoU / mean IoU. Rows index the
// ground truth, columns the prediction. Ignored truth pixels (255) contribute
// nothing; predictions must be total (255 is rejected). Matrices merge by
// addition, so sharded evaluation is order-independent.

#include <cstdint>
#include <string>
#include <vector>

#include "mfm/segmodel.hpp"

namespace mfm {

struct ConfusionMatrix {
    int classes = 0;
    std::vector<std::int64_t> counts;  // classes * classes, row-major

    static ConfusionMatrix make(int classes) {
        if (classes < 2 || classes > 254)
            throw ConfigError("confusion: classes must be in [2,254], got " +
                              std::to_string(classes));
        ConfusionMatrix m;
        m.classes = classes;
        m.counts.assign(static_cast<std::size_t>(classes) * classes, 0);
        return m;
    }

    std::int64_t& at(int truth, int pred) {
        return counts[static_cast<std::size_t>(truth) * classes + pred];
    }
    std::int64_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * classes + pred];
    }

    std::int64_t total() const {
        std::int64_t t = 0;
        for (auto v : counts) t += v;
        return t;
    }

    void merge(const ConfusionMatrix& other) {
        if (other.classes != classes)
            throw ConfigError("confusion: cannot merge " + std::to_string(other.classes) +
                              "-class counts into " + std::to_string(classes) + "-class matrix");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }
};

inline void accumulate(ConfusionMatrix& conf, const LabelMap& pred, const LabelMap& truth) {
    if (pred.h != truth.h || pred.w != truth.w)
        throw ConfigError("accumulate: prediction extent " + std::to_string(pred.h) + "x" +
                          std::to_string(pred.w) + " does not match truth " +
                          std::to_string(truth.h) + "x" + std::to_string(truth.w));
    for (std::size_t i = 0; i < truth.idx.size(); ++i) {
        const std::int32_t t = truth.idx[i];
        const std::int32_t p = pred.idx[i];
        if (t == kIgnoreLabel) continue;
        if (p == kIgnoreLabel)
            throw ConfigError("accumulate: prediction contains the ignore value 255; "
                              "predictions must be total");
        if (t < 0 || t >= conf.classes)
            throw ConfigError("accumulate: truth label " + std::to_string(t) + " out of range");
        if (p < 0 || p >= conf.classes)
            throw ConfigError("accumulate: predicted label " + std::to_string(p) +
                              " out of range");
        ++conf.at(t, p);
    }
}

struct IouReport {
    std::vector<double> per_class;  // 0.0 for classes without support
    std::vector<bool> valid;        // false = excluded from the mean
    double miou = 0.0;              // mean over valid classes (0 when none)
    std::int64_t scored = 0;        // total scored pixels
};

// IoU_c = diag_c / (row_c + col_c - diag_c); classes whose denominator is
// zero (never in truth nor prediction) are excluded from the mean.
inline IouReport miou(const ConfusionMatrix& conf) {
    IouReport r;
    r.per_class.assign(conf.classes, 0.0);
    r.valid.assign(conf.classes, false);
    r.scored = conf.total();
    double sum = 0.0;
    int included = 0;
    for (int c = 0; c < conf.classes; ++c) {
        std::int64_t row = 0, col = 0;
        for (int k = 0; k < conf.classes; ++k) {
            row += conf.at(c, k);
            col += conf.at(k, c);
        }
        const std::int64_t denom = row + col - conf.at(c, c);
        if (denom > 0) {
            r.per_class[c] = static_cast<double>(conf.at(c, c)) / static_cast<double>(denom);
            r.valid[c] = true;
            sum += r.per_class[c];
            ++included;
        }
    }
    r.miou = included > 0 ? sum / included : 0.0;
    return r;
}

}  // namespace mfm
