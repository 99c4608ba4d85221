#include "recindial/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "recindial/text.hpp"
#include "recindial/vocabulary.hpp"

namespace recindial {

using nlohmann::json;

namespace {

bool hit(const EvalInstance& inst, std::size_t k) {
    const std::size_t n = std::min(k, inst.items.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (std::find(inst.gold_items.begin(), inst.gold_items.end(), inst.items[i].first) != inst.gold_items.end()) {
            return true;
        }
    }
    return false;
}

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    std::map<NGram, std::size_t> out;
    if (tokens.size() < n) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++out[NGram(tokens.begin() + i, tokens.begin() + i + n)];
    return out;
}

std::vector<std::string> lowered(const std::vector<std::string>& v) {
    std::vector<std::string> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(to_lower(s));
    return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::vector<BucketRecall> summarize(const std::vector<std::string>& labels, const std::vector<std::size_t>& counts,
                                    const std::vector<std::size_t>& hits) {
    std::vector<BucketRecall> out;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (counts[b] == 0) continue;
        out.push_back({labels[b], counts[b], static_cast<double>(hits[b]) / static_cast<double>(counts[b])});
    }
    return out;
}

}  // namespace

double recall_at_k(const std::vector<EvalInstance>& instances, std::size_t k) {
    if (k == 0) throw std::invalid_argument("recall_at_k: k must be positive");
    std::size_t eligible = 0, hits = 0;
    for (const auto& inst : instances) {
        if (inst.gold_items.empty()) continue;
        ++eligible;
        if (hit(inst, k)) ++hits;
    }
    if (eligible == 0) throw std::invalid_argument("recall_at_k: no instance has gold items");
    return static_cast<double>(hits) / static_cast<double>(eligible);
}

double distinct_n(const std::vector<std::vector<std::string>>& responses, std::size_t n) {
    if (n == 0) throw std::invalid_argument("distinct_n: n must be positive");
    if (responses.empty()) return 0.0;
    double total = 0.0;
    for (const auto& r : responses) {
        if (r.empty()) continue;
        total += static_cast<double>(ngram_counts(r, n).size()) / static_cast<double>(r.size());
    }
    return total / static_cast<double>(responses.size());
}

double bleu(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference, std::size_t max_n,
            double smoothing) {
    if (max_n == 0) throw std::invalid_argument("bleu: max_n must be positive");
    if (hypothesis.empty() || reference.empty()) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        const auto h = ngram_counts(hypothesis, n);
        const auto r = ngram_counts(reference, n);
        std::size_t matched = 0, total = 0;
        for (const auto& [g, c] : h) {
            total += c;
            auto it = r.find(g);
            if (it != r.end()) matched += std::min(c, it->second);
        }
        if (matched == 0) {
            if (n == 1) return 0.0;
            log_sum += std::log(smoothing / static_cast<double>(std::max<std::size_t>(total, 1)));
        } else {
            log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
        }
    }
    const double c = static_cast<double>(hypothesis.size());
    const double rl = static_cast<double>(reference.size());
    const double bp = c > rl ? 1.0 : std::exp(1.0 - rl / c);
    return bp * std::exp(log_sum / static_cast<double>(max_n));
}

double rouge_l(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference, double beta) {
    if (hypothesis.empty() || reference.empty()) return 0.0;
    const std::size_t lcs = lcs_length(lowered(hypothesis), lowered(reference));
    if (lcs == 0) return 0.0;
    const double p = static_cast<double>(lcs) / static_cast<double>(hypothesis.size());
    const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
    const double b2 = beta * beta;
    return (1.0 + b2) * p * r / (r + b2 * p);
}

bool is_item_word(const std::string& token) {
    return token.size() > 1 && token.front() == '@';
}

double item_ratio(const std::vector<std::vector<std::string>>& responses, bool token_ratio) {
    if (responses.empty()) throw std::invalid_argument("item_ratio: no responses");
    std::size_t num = 0, den = 0;
    for (const auto& r : responses) {
        const auto items = static_cast<std::size_t>(std::count_if(r.begin(), r.end(), is_item_word));
        if (token_ratio) {
            num += items;
            den += r.size();
        } else {
            num += items > 0 ? 1 : 0;
            den += 1;
        }
    }
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

std::vector<BucketRecall> recall_by_frequency(const std::vector<EvalInstance>& instances,
                                              const std::unordered_map<std::string, std::size_t>& train_counts,
                                              std::size_t k, const std::vector<std::size_t>& edges) {
    if (edges.empty() || !std::is_sorted(edges.begin(), edges.end())) {
        throw std::invalid_argument("recall_by_frequency: edges must be non-empty and ascending");
    }
    std::vector<std::string> labels{"<" + std::to_string(edges.front())};
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        labels.push_back(std::to_string(edges[i]) + "-" + std::to_string(edges[i + 1] - 1));
    }
    labels.push_back(">=" + std::to_string(edges.back()));
    std::vector<std::size_t> counts(labels.size(), 0), hits(labels.size(), 0);
    for (const auto& inst : instances) {
        if (inst.gold_items.empty()) continue;
        std::size_t rarest = std::numeric_limits<std::size_t>::max();
        for (const auto& g : inst.gold_items) {
            auto it = train_counts.find(g);
            rarest = std::min(rarest, it == train_counts.end() ? std::size_t{0} : it->second);
        }
        const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), rarest) - edges.begin());
        ++counts[b];
        if (hit(inst, k)) ++hits[b];
    }
    return summarize(labels, counts, hits);
}

std::vector<BucketRecall> recall_by_turn(const std::vector<EvalInstance>& instances, std::size_t k) {
    const std::vector<std::string> labels{"1-5", "6-10", "11+"};
    std::vector<std::size_t> counts(3, 0), hits(3, 0);
    for (const auto& inst : instances) {
        if (inst.gold_items.empty()) continue;
        const std::size_t b = inst.turn_index <= 5 ? 0 : inst.turn_index <= 10 ? 1 : 2;
        ++counts[b];
        if (hit(inst, k)) ++hits[b];
    }
    return summarize(labels, counts, hits);
}

MetricsReport compute_metrics(const std::vector<EvalInstance>& instances,
                              const std::unordered_map<std::string, std::size_t>& train_counts) {
    if (instances.empty()) throw std::invalid_argument("compute_metrics: no instances");
    MetricsReport r;
    r.instances = instances.size();
    r.recall_instances = static_cast<std::size_t>(
        std::count_if(instances.begin(), instances.end(), [](const EvalInstance& i) { return !i.gold_items.empty(); }));
    if (r.recall_instances > 0) {
        for (std::size_t k : {1, 10, 50}) r.recall["R@" + std::to_string(k)] = recall_at_k(instances, k);
        for (std::size_t k : {30, 50}) {
            r.by_frequency[k] = recall_by_frequency(instances, train_counts, k);
            r.by_turn[k] = recall_by_turn(instances, k);
        }
    }
    std::vector<std::vector<std::string>> responses;
    double b2 = 0.0, b4 = 0.0, rl = 0.0;
    for (const auto& inst : instances) {
        responses.push_back(inst.generated_tokens);
        b2 += bleu(inst.generated_tokens, inst.reference_tokens, 2);
        b4 += bleu(inst.generated_tokens, inst.reference_tokens, 4);
        rl += rouge_l(inst.generated_tokens, inst.reference_tokens);
    }
    const auto n = static_cast<double>(instances.size());
    r.bleu2 = b2 / n;
    r.bleu4 = b4 / n;
    r.rouge_l = rl / n;
    r.dist2 = distinct_n(responses, 2);
    r.dist3 = distinct_n(responses, 3);
    r.dist4 = distinct_n(responses, 4);
    r.item_ratio = item_ratio(responses);
    return r;
}

std::string MetricsReport::to_text() const {
    std::ostringstream o;
    o << std::fixed << std::setprecision(4);
    o << "instances        " << instances << " (" << recall_instances << " with gold items)\n";
    for (const auto& [k, v] : recall) o << std::left << std::setw(17) << k << v << "\n";
    o << "Dist-2/3/4       " << dist2 << " / " << dist3 << " / " << dist4 << "\n";
    o << "BLEU-2/4         " << bleu2 << " / " << bleu4 << "\n";
    o << "Rouge-L          " << rouge_l << "\n";
    o << "Item Ratio (%)   " << std::setprecision(2) << item_ratio << std::setprecision(4) << "\n";
    if (perplexity) o << "PPL              " << *perplexity << "\n";
    auto table = [&](const char* title, const std::map<std::size_t, std::vector<BucketRecall>>& t) {
        for (const auto& [k, rows] : t) {
            o << title << " R@" << k << "\n";
            for (const auto& b : rows) o << "  " << std::left << std::setw(8) << b.label << " n=" << b.count << "  " << b.recall << "\n";
        }
    };
    table("by item frequency", by_frequency);
    table("by turn", by_turn);
    return o.str();
}

std::string MetricsReport::to_json() const {
    auto buckets = [](const std::map<std::size_t, std::vector<BucketRecall>>& t) {
        json j = json::object();
        for (const auto& [k, rows] : t) {
            json a = json::array();
            for (const auto& b : rows) a.push_back({{"bucket", b.label}, {"count", b.count}, {"recall", b.recall}});
            j["R@" + std::to_string(k)] = a;
        }
        return j;
    };
    json j{{"instances", instances}, {"recall_instances", recall_instances}, {"recall", recall},
           {"dist", {{"2", dist2}, {"3", dist3}, {"4", dist4}}}, {"bleu", {{"2", bleu2}, {"4", bleu4}}},
           {"rouge_l", rouge_l}, {"item_ratio", item_ratio}, {"by_frequency", buckets(by_frequency)},
           {"by_turn", buckets(by_turn)}};
    j["ppl"] = perplexity ? json(*perplexity) : json(nullptr);
    return j.dump(2);
}

void save_transcript(const std::filesystem::path& path, const std::vector<EvalInstance>& instances) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write transcript: " + path.string());
    for (const auto& i : instances) {
        json items = json::array();
        for (const auto& [id, p] : i.items) items.push_back(json::array({id, p}));
        out << json{{"pair_id", i.pair_id},         {"turn_index", i.turn_index},
                    {"generated_text", i.generated_text}, {"generated_tokens", i.generated_tokens},
                    {"items", items},               {"gold_items", i.gold_items},
                    {"reference_tokens", i.reference_tokens}}
                   .dump()
            << "\n";
    }
}

std::vector<EvalInstance> load_transcript(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open transcript: " + path.string());
    std::vector<EvalInstance> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            EvalInstance e;
            e.pair_id = j.at("pair_id");
            e.turn_index = j.value("turn_index", std::size_t{1});
            e.generated_text = j.value("generated_text", std::string{});
            e.generated_tokens = j.at("generated_tokens").get<std::vector<std::string>>();
            for (const auto& it : j.at("items")) e.items.emplace_back(it.at(0).get<std::string>(), it.at(1).get<double>());
            e.gold_items = j.at("gold_items").get<std::vector<std::string>>();
            e.reference_tokens = j.value("reference_tokens", std::vector<std::string>{});
            out.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + ex.what());
        }
    }
    return out;
}

}  // namespace recindial
