//! Interpolated Kneser-Ney n-gram language model.
//!
//! Used as an independent fluency reference: generated text is scored under
//! a model fit on original data, so a generator cannot grade its own output.
//!
//! Event convention: every example contributes its tokens plus one
//! end-of-sequence event; contexts near the start are padded with `<s>`.
//! `<s>` itself is never an event and never receives probability mass. The
//! lowest level interpolates with the uniform distribution over the
//! predictable vocabulary (everything except `<s>`), so every predictable
//! token scores strictly above zero.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{preprocess, Dataset, PreprocessConfig, Vocab};
use crate::lm::LmError;

/// Discount fallback when the count-of-counts estimate is undefined.
const DISCOUNT_FALLBACK: f64 = 0.75;
const DISCOUNT_MIN: f64 = 0.05;
const DISCOUNT_MAX: f64 = 0.95;

const SAVE_HEADER: &str = "lexboost-ngram v1";

type GramTable = HashMap<Vec<u32>, u64>;

/// Smoothed n-gram model over a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct NgramLm {
    order: usize,
    vocab: Vocab,
    preprocess: PreprocessConfig,
    /// `raw[k-1]`: occurrence counts of k-grams, one per event.
    raw: Vec<GramTable>,
    /// `cont[k-1]`: continuation counts for k < order (distinct one-token
    /// left extensions observed in the raw (k+1)-gram table).
    cont: Vec<GramTable>,
    /// Absolute discount per gram length.
    discount: Vec<f64>,
    /// Per context at gram length k: (total mass, distinct continuation
    /// types). Derived from the tables; rebuilt on load.
    ctx_stats: Vec<HashMap<Vec<u32>, (u64, u64)>>,
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn preprocess_config(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    /// The table discounted at gram length `k`: raw counts at the top
    /// level, continuation counts below.
    fn table(&self, k: usize) -> &GramTable {
        if k == self.order {
            &self.raw[k - 1]
        } else {
            &self.cont[k - 1]
        }
    }

    /// Number of predictable tokens (everything except `<s>`).
    fn predictable(&self) -> f64 {
        (self.vocab.len() - 1) as f64
    }

    /// P(w | ctx) with `ctx.len() < order`; longer histories must be
    /// truncated by the caller. `<s>` always scores zero.
    pub fn prob_cond(&self, ctx: &[u32], w: u32) -> f64 {
        debug_assert!(ctx.len() < self.order);
        if w == Vocab::BOS {
            return 0.0;
        }
        let k = ctx.len() + 1;
        let lower = if k == 1 {
            1.0 / self.predictable()
        } else {
            self.prob_cond(&ctx[1..], w)
        };
        let &(tot, types) = match self.ctx_stats[k - 1].get(ctx) {
            Some(s) => s,
            // Unseen context: defer entirely to the shorter history.
            None => return lower,
        };
        let d = self.discount[k - 1];
        let mut gram = ctx.to_vec();
        gram.push(w);
        let cnt = self.table(k).get(&gram).copied().unwrap_or(0) as f64;
        let tot = tot as f64;
        (cnt - d).max(0.0) / tot + d * types as f64 / tot * lower
    }

    /// Token-id events for one raw text: preprocessed tokens plus a final
    /// end-of-sequence event. None if preprocessing rejects the text.
    fn events(&self, text: &str) -> Option<Vec<u32>> {
        let tokens = preprocess(text, &self.preprocess)?;
        let mut ids: Vec<u32> = tokens.iter().map(|t| self.vocab.id_or_unk(t)).collect();
        ids.push(Vocab::EOS);
        Some(ids)
    }

    /// Mean per-event log-probability contributions for one text.
    fn score_events(&self, events: &[u32]) -> (f64, usize) {
        let mut hist = vec![Vocab::BOS; self.order - 1];
        let mut log_sum = 0.0;
        for &e in events {
            let ctx = &hist[hist.len() - (self.order - 1)..];
            log_sum += self.prob_cond(ctx, e).ln();
            hist.push(e);
        }
        (log_sum, events.len())
    }

    /// Serializes as a sorted text table: header, configuration, vocabulary,
    /// then one row per gram with its count and (informational) conditional
    /// log-probability. Deterministic, so model files diff cleanly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SAVE_HEADER}");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "max_tokens {}", self.preprocess.max_tokens);
        let flags = self.preprocess.strip_punctuation as u8
            | (self.preprocess.drop_hashtags as u8) << 1
            | (self.preprocess.drop_urls as u8) << 2;
        let _ = writeln!(out, "flags {flags}");
        let mut stop: Vec<&String> = self.preprocess.stopwords().iter().collect();
        stop.sort();
        let _ = writeln!(out, "stopwords {}", stop.len());
        for s in stop {
            let _ = writeln!(out, "{s}");
        }
        let _ = writeln!(out, "vocab {}", self.vocab.len());
        for id in 0..self.vocab.len() as u32 {
            let _ = writeln!(out, "{}", self.vocab.token(id));
        }
        let _ = writeln!(out, "discounts {}", self.order);
        for d in &self.discount {
            let _ = writeln!(out, "{d}");
        }
        for k in (1..=self.order).rev() {
            let section = if k == self.order { "ngrams" } else { "conts" };
            let table = self.table(k);
            let mut rows: Vec<(Vec<&str>, &Vec<u32>, u64)> = table
                .iter()
                .map(|(g, &c)| (g.iter().map(|&id| self.vocab.token(id)).collect(), g, c))
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            let _ = writeln!(out, "{section} {k} {}", rows.len());
            for (words, gram, count) in rows {
                let (ctx, w) = gram.split_at(k - 1);
                let lp = self.prob_cond(ctx, w[0]).ln();
                let _ = writeln!(out, "{} {count} {lp}", words.join(" "));
            }
        }
        let _ = writeln!(out, "end");
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NgramLm, LmError> {
        NgramLm::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<NgramLm, LmError> {
        let bad = |msg: &str| LmError::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(&format!("truncated before {what}")))
        };
        if next("header")? != SAVE_HEADER {
            return Err(bad("unrecognized header"));
        }
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str, LmError> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| LmError::Checkpoint(format!("expected `{key}`, got {line:?}")))
        }
        let order: usize = field(next("order")?, "order")?
            .parse()
            .map_err(|_| bad("bad order"))?;
        if !(1..=5).contains(&order) {
            return Err(bad("order out of range"));
        }
        let max_tokens: usize = field(next("max_tokens")?, "max_tokens")?
            .parse()
            .map_err(|_| bad("bad max_tokens"))?;
        let flags: u8 = field(next("flags")?, "flags")?
            .parse()
            .map_err(|_| bad("bad flags"))?;
        let n_stop: usize = field(next("stopwords")?, "stopwords")?
            .parse()
            .map_err(|_| bad("bad stopword count"))?;
        let mut stop = Vec::with_capacity(n_stop);
        for _ in 0..n_stop {
            stop.push(next("stopword")?.to_string());
        }
        let mut preprocess = PreprocessConfig::new(max_tokens, stop);
        preprocess.strip_punctuation = flags & 1 != 0;
        preprocess.drop_hashtags = flags & 2 != 0;
        preprocess.drop_urls = flags & 4 != 0;
        let n_vocab: usize = field(next("vocab")?, "vocab")?
            .parse()
            .map_err(|_| bad("bad vocab count"))?;
        if n_vocab < 4 {
            return Err(bad("vocabulary too small"));
        }
        let mut words = Vec::with_capacity(n_vocab - 3);
        for i in 0..n_vocab {
            let tok = next("vocab entry")?;
            if i >= 3 {
                words.push(tok.to_string());
            }
        }
        let vocab = Vocab::from_tokens(words).map_err(|e| bad(&e.to_string()))?;
        if vocab.len() != n_vocab {
            return Err(bad("vocabulary size mismatch"));
        }
        let n_disc: usize = field(next("discounts")?, "discounts")?
            .parse()
            .map_err(|_| bad("bad discount count"))?;
        if n_disc != order {
            return Err(bad("discount count must equal order"));
        }
        let mut discount = Vec::with_capacity(order);
        for _ in 0..order {
            discount.push(
                next("discount")?
                    .parse::<f64>()
                    .map_err(|_| bad("bad discount"))?,
            );
        }
        let mut raw: Vec<GramTable> = vec![HashMap::new(); order];
        let mut cont: Vec<GramTable> = vec![HashMap::new(); order.saturating_sub(1)];
        for k in (1..=order).rev() {
            let head = next("gram section")?;
            let expect = if k == order { "ngrams" } else { "conts" };
            let rest = field(head, expect)?;
            let mut it = rest.split(' ');
            let got_k: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad section order"))?;
            let n_rows: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad section row count"))?;
            if got_k != k || it.next().is_some() {
                return Err(bad("unexpected gram section"));
            }
            let target = if k == order {
                &mut raw[k - 1]
            } else {
                &mut cont[k - 1]
            };
            for _ in 0..n_rows {
                let row = next("gram row")?;
                let cols: Vec<&str> = row.split(' ').collect();
                // k tokens + count + logprob
                if cols.len() != k + 2 {
                    return Err(bad(&format!("malformed gram row {row:?}")));
                }
                let mut gram = Vec::with_capacity(k);
                for tok in &cols[..k] {
                    let id = vocab
                        .id(tok)
                        .ok_or_else(|| bad(&format!("unknown token {tok:?} in gram row")))?;
                    gram.push(id);
                }
                let count: u64 = cols[k].parse().map_err(|_| bad("bad gram count"))?;
                cols[k + 1]
                    .parse::<f64>()
                    .map_err(|_| bad("bad gram log-prob"))?;
                if target.insert(gram, count).is_some() {
                    return Err(bad("duplicate gram row"));
                }
            }
        }
        if next("end marker")? != "end" {
            return Err(bad("missing end marker"));
        }
        let mut lm = NgramLm {
            order,
            vocab,
            preprocess,
            raw,
            cont,
            discount,
            ctx_stats: Vec::new(),
        };
        lm.rebuild_ctx_stats();
        Ok(lm)
    }

    fn rebuild_ctx_stats(&mut self) {
        let mut stats = Vec::with_capacity(self.order);
        for k in 1..=self.order {
            let mut per_ctx: HashMap<Vec<u32>, (u64, u64)> = HashMap::new();
            for (gram, &cnt) in self.table(k) {
                let e = per_ctx.entry(gram[..k - 1].to_vec()).or_insert((0, 0));
                e.0 += cnt;
                e.1 += 1;
            }
            stats.push(per_ctx);
        }
        self.ctx_stats = stats;
    }
}

/// Estimates the absolute discount from the count-of-counts of `counts`
/// (the Ney et al. closed form), clamped away from the degenerate ends.
fn estimate_discount<'a>(counts: impl Iterator<Item = &'a u64>) -> f64 {
    let mut n1 = 0u64;
    let mut n2 = 0u64;
    for &c in counts {
        match c {
            1 => n1 += 1,
            2 => n2 += 1,
            _ => {}
        }
    }
    if n1 == 0 {
        return DISCOUNT_FALLBACK;
    }
    (n1 as f64 / (n1 as f64 + 2.0 * n2 as f64)).clamp(DISCOUNT_MIN, DISCOUNT_MAX)
}

/// Fits an interpolated Kneser-Ney model of the given order. Orders 2..=5
/// are the supported operating range; order 1 (a smoothed unigram) is
/// permitted for closed-form sanity checks.
pub fn train_ngram(
    train: &Dataset,
    vocab: Vocab,
    cfg: PreprocessConfig,
    order: usize,
) -> Result<NgramLm, LmError> {
    if !(1..=5).contains(&order) {
        return Err(LmError::BadConfig(format!(
            "n-gram order must be in 1..=5, got {order}"
        )));
    }
    let mut raw: Vec<GramTable> = vec![HashMap::new(); order];
    let mut any = false;
    for ex in train.examples() {
        let Some(tokens) = preprocess(&ex.text, &cfg) else {
            continue;
        };
        any = true;
        let mut events: Vec<u32> = tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
        events.push(Vocab::EOS);
        let mut hist = vec![Vocab::BOS; order - 1];
        for &e in &events {
            for k in 1..=order {
                let mut gram = hist[hist.len() - (k - 1)..].to_vec();
                gram.push(e);
                *raw[k - 1].entry(gram).or_insert(0) += 1;
            }
            hist.push(e);
        }
    }
    if !any {
        return Err(LmError::NoSequences);
    }
    let mut cont: Vec<GramTable> = vec![HashMap::new(); order.saturating_sub(1)];
    for k in 1..order {
        let mut table = HashMap::new();
        for gram in raw[k].keys() {
            *table.entry(gram[1..].to_vec()).or_insert(0) += 1;
        }
        cont[k - 1] = table;
    }
    let mut lm = NgramLm {
        order,
        vocab,
        preprocess: cfg,
        raw,
        cont,
        discount: Vec::new(),
        ctx_stats: Vec::new(),
    };
    lm.discount = (1..=order)
        .map(|k| estimate_discount(lm.table(k).values()))
        .collect();
    lm.rebuild_ctx_stats();
    Ok(lm)
}

/// Exponentiated mean negative log-likelihood per event over the dataset.
/// Examples rejected by preprocessing are skipped.
pub fn ngram_perplexity(lm: &NgramLm, ds: &Dataset) -> Result<f64, LmError> {
    let mut log_sum = 0.0;
    let mut n = 0usize;
    for ex in ds.examples() {
        if let Some(events) = lm.events(&ex.text) {
            let (ls, ne) = lm.score_events(&events);
            log_sum += ls;
            n += ne;
        }
    }
    if n == 0 {
        return Err(LmError::NoEvents);
    }
    Ok((-log_sum / n as f64).exp())
}
