#pragma once

#include <optional>
#include <span>
#include <string>

#include "ewcdet/evaluation.hpp"
#include "ewcdet/training.hpp"

namespace ewcdet {

// CSV emitters. MR^-2 columns are percentages with four decimals; missing
// values (not-applicable buckets, unevaluated epochs) are empty fields.

/// epoch,l_cls,l_reg,l_ewc,l_total,mr2_A,mr2_B; epochs numbered from
/// `first_epoch`.
std::string train_log_csv(const TrainLog& log, int first_epoch = 1);

/// stage,train_domain,test_domain,reasonable,bare,partial,heavy
std::string mr2_table_csv(const ScenarioReport& report);

/// arm,test_domain,bucket,mr2_before,mr2_after,absolute_increase,percent_increase
std::string forgetting_csv(const ScenarioReport& report);

/// test_domain,bucket,baseline,proposed,improvement (improvement = baseline - proposed)
std::string improvement_csv(const ScenarioReport& report);

/// arm,epoch,mr2_A,mr2_B. Reference training occupies epochs 1..E and each
/// fine-tuning arm continues at E+1..2E.
std::string epoch_curve_csv(const ScenarioReport& report);

/// fppi,miss_rate,threshold
std::string fppi_curve_csv(const EvalReport& report);

/// Header comment with the recommended lambda, then
/// lambda,mr2_A,mr2_B,drift rows.
std::string sweep_csv(std::span<const SweepRow> rows);

/// Fixed-width text table with one column per occlusion bucket.
std::string mr2_table_text(const ScenarioReport& report);

/// Line plot of Reasonable MR^-2 against epoch for one test domain
/// ('A' or 'B').
std::string epoch_curve_svg(const ScenarioReport& report, char domain);

std::string format_percent(std::optional<double> fraction);

}  // namespace ewcdet
