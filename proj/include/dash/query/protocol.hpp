#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/adapters/ops.hpp"
#include "dash/core/run_store.hpp"
#include "dash/core/types.hpp"

#include <dash/prompt_assets.hpp>

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dash {

/// The conversation used to ask an LLM for spurious-feature prompts.
struct PromptProtocol {
    std::string name;
    std::string system_prompt;
    std::string user_template = "object: OBJ";
    std::optional<std::string> followup;  // second user turn asking for a corrected list
    int expected_count = 50;

    /// Spurious-feature prompts: 50 per object, initial list then correction.
    static PromptProtocol standard() {
        return {"standard", std::string(assets::dash_llm_system_v1), "object: OBJ",
                std::string(assets::dash_llm_followup_v1), 50};
    }

    /// Object-present prompts for the reverse task: 20 per object, one turn.
    static PromptProtocol reverse() {
        return {"reverse", std::string(assets::dash_llm_reverse_system_v1), "object: OBJ", std::nullopt, 20};
    }

    static PromptProtocol named(std::string_view name) {
        if (name == "standard") return standard();
        if (name == "reverse") return reverse();
        throw ConfigError("unknown prompt protocol '" + std::string(name) + "'");
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

/// "<int>: <text>" with optional surrounding whitespace. Lines without text
/// do not count as entries.
inline std::optional<std::pair<int, std::string>> numbered_line(std::string_view line) {
    line = trim(line);
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i == 0 || i > 6 || i >= line.size() || line[i] != ':') return std::nullopt;
    const std::string_view text = trim(line.substr(i + 1));
    if (text.empty()) return std::nullopt;
    return std::pair{std::stoi(std::string(line.substr(0, i))), std::string(text)};
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
    return out;
}

} // namespace detail

/// Extracts prompts 1..expected from a numbered list, ignoring any line that
/// is not "<int>: <text>".
inline std::vector<std::string> parse_prompt_list(std::string_view text, int expected) {
    std::map<int, std::string> found;
    std::set<int> duplicates;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        auto entry = detail::numbered_line(line);
        if (!entry) continue;
        if (!found.emplace(entry->first, entry->second).second) duplicates.insert(entry->first);
    }
    if (!duplicates.empty()) {
        std::vector<int> idx(duplicates.begin(), duplicates.end());
        throw ParseError(ParseError::Kind::duplicate, idx, "duplicate prompt indices: " + detail::join_ints(idx));
    }
    std::vector<int> extra;
    for (const auto& [k, _] : found)
        if (k < 1 || k > expected) extra.push_back(k);
    if (!extra.empty())
        throw ParseError(ParseError::Kind::count, extra,
                         "indices outside 1.." + std::to_string(expected) + ": " + detail::join_ints(extra));
    std::vector<int> missing;
    for (int k = 1; k <= expected; ++k)
        if (!found.count(k)) missing.push_back(k);
    if (!missing.empty())
        throw ParseError(ParseError::Kind::missing, missing, "missing prompt indices: " + detail::join_ints(missing));
    std::vector<std::string> out;
    out.reserve(found.size());
    for (auto& [_, v] : found) out.push_back(std::move(v));
    return out;
}

inline std::string render_prompt_list(const std::vector<std::string>& prompts) {
    std::string out;
    for (std::size_t i = 0; i < prompts.size(); ++i) out += std::to_string(i + 1) + ": " + prompts[i] + "\n";
    return out;
}

/// Normal form of a numbered list: entry lines only, trimmed, in index order.
inline std::string canonical_prompt_list(std::string_view text) {
    std::vector<std::pair<int, std::string>> entries;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line))
        if (auto e = detail::numbered_line(line)) entries.push_back(std::move(*e));
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string out;
    for (const auto& [k, v] : entries) out += std::to_string(k) + ": " + v + "\n";
    return out;
}

/// Known compound object names and their parts.
using CompoundDictionary = std::map<std::string, std::vector<std::string>>;

inline CompoundDictionary default_compounds() {
    return {{"firetruck", {"fire", "truck"}}, {"mountainbike", {"mountain", "bike"}}};
}

struct LeakFlag {
    bool leaks_name = false;
    std::string matched;  // first offending term

    bool clean() const noexcept { return !leaks_name; }
};

/// Terms that must not occur as whole words: the full name, its whitespace and
/// hyphen parts, and dictionary parts of compounds.
inline std::vector<std::string> name_terms(std::string_view object, const CompoundDictionary& compounds) {
    std::string lower(object);
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::vector<std::string> terms{lower};
    std::string part;
    auto flush = [&] {
        if (!part.empty()) terms.push_back(part);
        part.clear();
    };
    for (char c : lower) {
        if (std::isspace(static_cast<unsigned char>(c)) || c == '-')
            flush();
        else
            part.push_back(c);
    }
    flush();
    for (std::size_t i = 0, n = terms.size(); i < n; ++i)
        if (auto it = compounds.find(terms[i]); it != compounds.end())
            terms.insert(terms.end(), it->second.begin(), it->second.end());
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    return terms;
}

/// Case-insensitive whole-word leak check. Flags only; nothing is removed.
inline std::vector<LeakFlag> validate_queries(const std::vector<std::string>& queries, std::string_view object,
                                              const CompoundDictionary& compounds = default_compounds()) {
    const auto terms = name_terms(object, compounds);
    std::vector<LeakFlag> flags;
    flags.reserve(queries.size());
    for (const auto& q : queries) {
        std::vector<std::string> words;
        std::string w;
        for (char c : q) {
            if (std::isalnum(static_cast<unsigned char>(c))) {
                w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            } else if (!w.empty()) {
                words.push_back(std::move(w));
                w.clear();
            }
        }
        if (!w.empty()) words.push_back(std::move(w));
        // Multi-word names must also match as a phrase.
        std::string joined;
        for (const auto& x : words) joined += " " + x + " ";
        LeakFlag f;
        for (const auto& t : terms) {
            const bool hit = t.find(' ') != std::string::npos ? joined.find(" " + t + " ") != std::string::npos
                                                               : std::find(words.begin(), words.end(), t) != words.end();
            if (hit) {
                f.leaks_name = true;
                f.matched = t;
                break;
            }
        }
        flags.push_back(std::move(f));
    }
    return flags;
}

struct TextQueryOptions {
    int max_regenerations = 3;   // extra attempts after the first
    int transport_retries = 2;
    CompoundDictionary compounds = default_compounds();
};

struct TextQueryResult {
    std::vector<Query> queries;
    int attempts = 0;
    bool failed = false;
    std::string error;
    std::vector<std::string> transcript;  // final LLM replies, one per attempt
};

inline std::string query_id(std::string_view object, std::string_view origin, std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", index);
    return object_file_stem(object) + "/" + std::string(origin) + "/" + buf;
}

/// Runs the protocol for one object. The follow-up turn, when the protocol
/// has one, is always sent; the list in its reply is the one parsed.
inline TextQueryResult generate_text_queries(LlmAdapter& llm, EmbedderAdapter& embedder, const ObjectSpec& object,
                                             const PromptProtocol& protocol, const TextQueryOptions& opt = {}) {
    TextQueryResult res;
    std::vector<std::string> prompts;
    for (int attempt = 0; attempt <= opt.max_regenerations; ++attempt) {
        ++res.attempts;
        try {
            std::vector<ChatMessage> messages{{"system", protocol.system_prompt},
                                              {"user", render_template(protocol.user_template, object.name)}};
            std::string reply = with_retries(opt.transport_retries, [&] { return llm.chat(messages); });
            if (protocol.followup) {
                messages.push_back({"assistant", reply});
                messages.push_back({"user", *protocol.followup});
                reply = with_retries(opt.transport_retries, [&] { return llm.chat(messages); });
            }
            res.transcript.push_back(reply);
            prompts = parse_prompt_list(reply, protocol.expected_count);
            break;
        } catch (const ParseError& e) {
            res.error = e.what();
        } catch (const TransportError& e) {
            res.error = e.what();
        }
    }
    if (prompts.empty()) {
        res.failed = true;
        return res;
    }
    res.error.clear();
    const auto flags = validate_queries(prompts, object.name, opt.compounds);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        Query q;
        q.id = query_id(object.name, "llm", i + 1);
        q.object = object;
        q.kind = QueryKind::text;
        q.payload = prompts[i];
        q.embedding = embedder.embed_text(prompts[i]);
        q.origin = QueryOrigin::llm;
        q.leaks_name = flags[i].leaks_name;
        res.queries.push_back(std::move(q));
    }
    return res;
}

} // namespace dash
