#include "reqdep/extract.hpp"

#include "reqdep/errors.hpp"
#include "reqdep/fs.hpp"
#include "reqdep/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <optional>
#include <sstream>

namespace reqdep::extract {

namespace {

constexpr std::array<std::string_view, 4> kModals = {"shall", "must", "will", "should"};
constexpr std::array<std::string_view, 6> kIntroducers = {"when", "if",     "while",
                                                          "where", "unless", "until"};
// Tokens skipped when looking for the main verb after the modal.
constexpr std::array<std::string_view, 14> kAuxiliaries = {
    "be",   "not",  "also", "always", "only",    "never", "able",
    "to",   "then", "both", "either", "capable", "of",    "further"};
// Words ending in "ly" that are not adverbs.
constexpr std::array<std::string_view, 9> kLyNouns = {
    "supply", "apply", "reply", "assembly", "family", "anomaly", "comply", "rely", "poly"};

template <std::size_t N>
bool in(const std::array<std::string_view, N>& list, std::string_view word) {
    return std::find(list.begin(), list.end(), word) != list.end();
}

bool alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool is_adverb(std::string_view t) {
    return t.size() > 4 && t.ends_with("ly") && !in(kLyNouns, t);
}

bool is_vowel_at(std::string_view w, std::size_t i) {
    switch (w[i]) {
        case 'a': case 'e': case 'i': case 'o': case 'u': return true;
        case 'y': return i > 0 && !is_vowel_at(w, i - 1);
        default: return false;
    }
}

bool has_vowel(std::string_view w) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (is_vowel_at(w, i)) return true;
    }
    return false;
}

// Number of vowel-consonant sequences: [C](VC)^m[V].
int measure(std::string_view w) {
    int m = 0;
    bool prev_vowel = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const bool v = is_vowel_at(w, i);
        if (prev_vowel && !v) ++m;
        prev_vowel = v;
    }
    return m;
}

// consonant-vowel-consonant ending, last consonant not w/x/y
bool ends_cvc(std::string_view w) {
    const std::size_t n = w.size();
    if (n < 3) return false;
    const char last = w[n - 1];
    return !is_vowel_at(w, n - 3) && is_vowel_at(w, n - 2) && !is_vowel_at(w, n - 1) &&
           last != 'w' && last != 'x' && last != 'y';
}

bool is_consonant_char(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) && std::string_view("aeiou").find(c) ==
                                                              std::string_view::npos;
}

std::string repair_stem(std::string stem, const Lexicon& lex) {
    if (lex.e_final.contains(stem + "e")) return stem + "e";
    const std::size_t n = stem.size();
    if (n >= 2 && stem[n - 1] == stem[n - 2] && is_consonant_char(stem[n - 1]) &&
        stem[n - 1] != 'l' && stem[n - 1] != 's' && stem[n - 1] != 'z') {
        stem.pop_back();
        return stem;
    }
    if (stem.ends_with("iz") || stem.ends_with("yz") || stem.ends_with("bl")) return stem + "e";
    if (n >= 3 && stem.ends_with("at") && is_consonant_char(stem[n - 3])) return stem + "e";
    if (stem.ends_with("v") || stem.ends_with("c") || stem.ends_with("u")) return stem + "e";
    if (n >= 3 && stem[n - 1] == 'l' && is_consonant_char(stem[n - 2]) && stem[n - 2] != 'l') {
        return stem + "e";
    }
    if (measure(stem) == 1 && ends_cvc(stem)) return stem + "e";
    return stem;
}

struct Token {
    std::string text;
    bool clause_end = false;  // raw token carried trailing , ; : . ! ?
};

std::vector<Token> tokenize(std::string_view input) {
    std::vector<Token> out;
    for (const auto& raw : text::split_ws(input)) {
        std::size_t b = 0;
        std::size_t e = raw.size();
        while (b < e && !alnum(raw[b])) ++b;
        bool clause_end = false;
        while (e > b && !alnum(raw[e - 1])) {
            if (std::string_view(",;:.!?").find(raw[e - 1]) != std::string_view::npos) {
                clause_end = true;
            }
            --e;
        }
        if (b == e) {
            // a lone punctuation token still closes the preceding clause
            if (!out.empty() && raw.find_first_of(",;:.!?") != std::string::npos) {
                out.back().clause_end = true;
            }
            continue;
        }
        out.push_back({text::to_lower(std::string_view(raw).substr(b, e - b)), clause_end});
    }
    return out;
}

std::string span_text(const std::vector<Token>& toks, std::size_t b, std::size_t e) {
    std::string out;
    for (std::size_t i = b; i < e; ++i) {
        if (i > b) out.push_back(' ');
        out += toks[i].text;
    }
    return out;
}

void read_lines(const std::filesystem::path& path, auto&& sink) {
    std::istringstream in(fs::read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto trimmed = text::trim(line);
        if (trimmed.empty() || trimmed.front() == '#') continue;
        sink(line);
    }
}

}  // namespace

std::string_view to_string(EntityKind kind) {
    switch (kind) {
        case EntityKind::Actor: return "Actor";
        case EntityKind::Action: return "Action";
        case EntityKind::Object: return "Object";
        case EntityKind::Attribute: return "Attribute";
        case EntityKind::Condition: return "Condition";
    }
    return "?";
}

EntityKind parse_kind(std::string_view name) {
    for (auto k : kAllKinds) {
        if (to_string(k) == name) return k;
    }
    throw ParseError("unknown entity kind '" + std::string(name) + "'");
}

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("REQDEP_DATA_DIR"); env && *env) return env;
    return REQDEP_DATA_DIR;
}

Lexicon Lexicon::load(const std::filesystem::path& dir) {
    Lexicon lex;
    read_lines(dir / "stopwords.txt",
               [&](const std::string& l) { lex.stopwords.insert(text::to_lower(text::trim(l))); });
    read_lines(dir / "irregular_lemmas.txt", [&](const std::string& l) {
        const auto parts = text::split_ws(l);
        if (parts.size() != 2) throw ParseError("irregular_lemmas.txt: bad entry '" + l + "'");
        lex.irregular[parts[0]] = parts[1];
    });
    read_lines(dir / "e_final_stems.txt",
               [&](const std::string& l) { lex.e_final.insert(text::to_lower(text::trim(l))); });
    return lex;
}

const Lexicon& Lexicon::bundled() {
    static const Lexicon lex = load(default_data_dir());
    return lex;
}

std::vector<std::string> normalize_tokens(std::string_view input) {
    std::vector<std::string> out;
    for (auto& t : tokenize(input)) out.push_back(std::move(t.text));
    return out;
}

std::string lemmatize(std::string_view token, const Lexicon& lex) {
    std::string w(token);
    if (auto it = lex.irregular.find(w); it != lex.irregular.end()) return it->second;
    if (w.size() <= 3 || text::is_number(w)) return w;

    if (w.ends_with("eed")) return w;
    if (w.ends_with("ed")) {
        const std::string stem = w.substr(0, w.size() - 2);
        if (stem.size() >= 2 && has_vowel(stem)) return repair_stem(stem, lex);
        return w;
    }
    if (w.ends_with("ing")) {
        const std::string stem = w.substr(0, w.size() - 3);
        if (stem.size() >= 2 && has_vowel(stem)) return repair_stem(stem, lex);
        return w;
    }
    if (w.ends_with("ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
    if (w.ends_with("sses")) return w.substr(0, w.size() - 2);
    if (w.ends_with("es")) {
        const std::string_view stem = std::string_view(w).substr(0, w.size() - 2);
        for (std::string_view s : {"sh", "ch", "x", "zz", "ss", "o"}) {
            if (stem.ends_with(s)) return std::string(stem);
        }
        return w.substr(0, w.size() - 1);
    }
    if (w.ends_with("s") && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is")) {
        return w.substr(0, w.size() - 1);
    }
    return w;
}

EntitySet extract_entities(const corpus::Requirement& req, const Lexicon& lex) {
    EntitySet out{req.id, {}};
    const auto toks = tokenize(req.text);
    const std::size_t n = toks.size();
    if (n == 0) return out;

    auto is_stop = [&](const std::string& t) { return lex.stopwords.contains(t); };
    auto is_introducer = [&](std::size_t i) { return in(kIntroducers, toks[i].text); };

    std::optional<std::size_t> modal;
    for (std::size_t i = 0; i < n; ++i) {
        if (in(kModals, toks[i].text)) {
            modal = i;
            break;
        }
    }

    // Conditions: [introducer+1, next introducer | clause end | modal)
    std::vector<bool> in_condition(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (!is_introducer(i)) continue;
        in_condition[i] = true;
        std::size_t e = i + 1;
        if (!toks[i].clause_end) {
            while (e < n && !is_introducer(e) && !(modal && e == *modal && i < *modal)) {
                const bool close = toks[e].clause_end;
                ++e;
                if (close) break;
            }
        }
        for (std::size_t j = i + 1; j < e; ++j) in_condition[j] = true;
        if (e > i + 1) out.entities.insert({EntityKind::Condition, span_text(toks, i + 1, e)});
    }

    // Attributes: number+unit bigrams and comparative phrases, anywhere.
    std::vector<bool> claimed(n, false);
    auto is_unit = [&](std::size_t i) {
        const auto& t = toks[i].text;
        return !text::is_number(t) && !is_stop(t) && !in(kModals, t) && !is_introducer(i) &&
               std::all_of(t.begin(), t.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
    };
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (!text::is_number(toks[i].text) || toks[i].clause_end || !is_unit(i + 1)) continue;
        out.entities.insert({EntityKind::Attribute, span_text(toks, i, i + 2)});
        claimed[i] = claimed[i + 1] = true;
        if (i >= 2) {
            const auto& a = toks[i - 2].text;
            const auto& b = toks[i - 1].text;
            const bool comparative = ((a == "more" || a == "less") && b == "than") ||
                                     (a == "at" && (b == "least" || b == "most"));
            if (comparative) {
                out.entities.insert({EntityKind::Attribute, span_text(toks, i - 2, i + 2)});
                claimed[i - 2] = claimed[i - 1] = true;
            }
        }
    }

    if (!modal) return out;

    // Actor: the token span before the modal, after the last clause break or
    // condition, with leading function words removed.
    std::size_t actor_begin = 0;
    for (std::size_t i = 0; i < *modal; ++i) {
        if (in_condition[i] || toks[i].clause_end) actor_begin = i + 1;
    }
    while (actor_begin < *modal && is_stop(toks[actor_begin].text)) ++actor_begin;
    if (actor_begin < *modal) {
        out.entities.insert({EntityKind::Actor, span_text(toks, actor_begin, *modal)});
    }

    // Action: first verb-like token after the modal.
    std::optional<std::size_t> action;
    for (std::size_t i = *modal + 1; i < n && !is_introducer(i); ++i) {
        const auto& t = toks[i].text;
        if (in(kAuxiliaries, t) || is_adverb(t) || text::is_number(t)) continue;
        action = i;
        break;
    }
    if (!action) return out;
    out.entities.insert({EntityKind::Action, lemmatize(toks[*action].text, lex)});

    // Objects: contiguous runs of content tokens between the action and the
    // first condition introducer.
    std::size_t run_begin = *action + 1;
    auto flush = [&](std::size_t end) {
        if (end > run_begin) out.entities.insert({EntityKind::Object, span_text(toks, run_begin, end)});
    };
    std::size_t i = *action + 1;
    for (; i < n && !is_introducer(i); ++i) {
        const auto& t = toks[i].text;
        const bool content = !is_stop(t) && !claimed[i] && !text::is_number(t) && !is_adverb(t) &&
                             !in(kAuxiliaries, t) && !in(kModals, t);
        if (!content) {
            flush(i);
            run_begin = i + 1;
        } else if (toks[i].clause_end) {
            flush(i + 1);
            run_begin = i + 1;
        }
    }
    flush(i);
    return out;
}

std::vector<EntitySet> extract_all(const corpus::Dataset& dataset, const Lexicon& lexicon) {
    std::vector<EntitySet> out;
    out.reserve(dataset.requirements.size());
    for (const auto& r : dataset.requirements) out.push_back(extract_entities(r, lexicon));
    return out;
}

}  // namespace reqdep::extract
