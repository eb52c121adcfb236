#pragma once

// Evaluation report over (prediction, reference) mask pairs: per-case and
// mean DSC and HD95 for every foreground class. A case may carry a class
// probability map, which adds the binary-foreground IoU threshold sweep;
// the foreground probability is one minus the background channel.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unet22/common.hpp"
#include "unet22/metrics.hpp"
#include "unet22/tensor.hpp"

namespace unet22 {

struct EvalCase {
    std::string id;
    IntGrid pred;
    IntGrid gt;
    TensorD class_prob;  // optional [classes, h, w]
};

inline nlohmann::json metric_report(const std::vector<EvalCase>& cases, int num_classes) {
    if (cases.empty()) throw ContractError("metric_report: no cases");
    if (num_classes < 2) throw ConfigError("metric_report: need at least 2 classes");

    auto check_labels = [num_classes](const IntGrid& g, const std::string& id, const char* role) {
        for (int32_t v : g.v)
            if (v < 0 || v >= num_classes)
                throw ContractError("metric_report: case '" + id + "' " + role + " label " +
                                    std::to_string(v) + " outside [0, " +
                                    std::to_string(num_classes) + ")");
    };

    nlohmann::json case_list = nlohmann::json::array();
    std::vector<double> dsc_sum(static_cast<size_t>(num_classes), 0.0);
    std::vector<double> hd_sum(static_cast<size_t>(num_classes), 0.0);
    std::vector<bool> any_flagged(static_cast<size_t>(num_classes), false);
    std::vector<double> miou_means;

    for (const EvalCase& c : cases) {
        if (c.pred.shape != c.gt.shape)
            throw ShapeError("metric_report: case '" + c.id + "' prediction shape " +
                             shape_str(c.pred.shape) + " does not match reference " +
                             shape_str(c.gt.shape));
        if (c.pred.rank() != 2)
            throw ShapeError("metric_report: case '" + c.id + "' masks must be [h, w]");
        check_labels(c.pred, c.id, "prediction");
        check_labels(c.gt, c.id, "reference");

        nlohmann::json dsc = nlohmann::json::object();
        nlohmann::json hd = nlohmann::json::object();
        nlohmann::json flagged = nlohmann::json::object();
        for (int cls = 1; cls < num_classes; ++cls) {
            const std::string key = std::to_string(cls);
            const double d = dsc_metric(c.pred, c.gt, cls);
            const Hd95Result h = hd95_metric(c.pred, c.gt, cls);
            dsc[key] = d;
            hd[key] = h.value;
            flagged[key] = h.empty_side;
            dsc_sum[static_cast<size_t>(cls)] += d;
            hd_sum[static_cast<size_t>(cls)] += h.value;
            if (h.empty_side) any_flagged[static_cast<size_t>(cls)] = true;
        }
        nlohmann::json entry{{"id", c.id}, {"dsc", dsc}, {"hd95", hd}, {"hd95_flagged", flagged}};

        if (c.class_prob.defined()) {
            if (c.class_prob.rank() != 3 || c.class_prob.size(0) != num_classes ||
                c.class_prob.size(1) != c.gt.shape[0] || c.class_prob.size(2) != c.gt.shape[1])
                throw ShapeError("metric_report: case '" + c.id +
                                 "' probability map must be [classes, h, w] matching the masks");
            TensorD fg({c.gt.shape[0], c.gt.shape[1]});
            for (int y = 0; y < c.gt.shape[0]; ++y)
                for (int x = 0; x < c.gt.shape[1]; ++x) fg(y, x) = 1.0 - c.class_prob(0, y, x);
            const MiouSweep sweep = miou_sweep(fg, c.gt);
            entry["miou"] = {{"thresholds", sweep.thresholds}, {"iou", sweep.iou}, {"mean", sweep.mean}};
            miou_means.push_back(sweep.mean);
        }
        case_list.push_back(std::move(entry));
    }

    nlohmann::json mean_dsc = nlohmann::json::object();
    nlohmann::json mean_hd = nlohmann::json::object();
    nlohmann::json flagged_any = nlohmann::json::object();
    const double n = static_cast<double>(cases.size());
    for (int cls = 1; cls < num_classes; ++cls) {
        const std::string key = std::to_string(cls);
        mean_dsc[key] = dsc_sum[static_cast<size_t>(cls)] / n;
        mean_hd[key] = hd_sum[static_cast<size_t>(cls)] / n;
        flagged_any[key] = static_cast<bool>(any_flagged[static_cast<size_t>(cls)]);
    }

    nlohmann::json report{{"num_classes", num_classes},
                          {"cases", case_list},
                          {"mean_dsc", mean_dsc},
                          {"mean_hd95", mean_hd},
                          {"hd95_any_flagged", flagged_any}};
    if (!miou_means.empty()) {
        double m = 0.0;
        for (double v : miou_means) m += v;
        report["mean_miou"] = m / static_cast<double>(miou_means.size());
    }
    return report;
}

}  // namespace unet22
