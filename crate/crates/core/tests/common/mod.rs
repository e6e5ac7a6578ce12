#![allow(dead_code)]

use topeval::corpus::{encode_corpus, EncodedCorpus, TokenizedDoc, Vocabulary};

/// Word and pair window counts by listing every window explicitly.
pub struct BruteCounts {
    pub v: usize,
    pub total: u64,
    pub words: Vec<u64>,
    /// Dense `v * v` matrix, filled for `a < b` only.
    pub pairs: Vec<u64>,
}

impl BruteCounts {
    pub fn word(&self, a: u32) -> u64 {
        self.words[a as usize]
    }

    pub fn pair(&self, a: u32, b: u32) -> u64 {
        if a == b {
            return self.word(a);
        }
        let (lo, hi) = (a.min(b) as usize, a.max(b) as usize);
        self.pairs[lo * self.v + hi]
    }

    pub fn nonzero_pairs(&self) -> usize {
        self.pairs.iter().filter(|&&c| c > 0).count()
    }
}

pub fn brute_counts(docs: &[Vec<u32>], v: usize, window: usize) -> BruteCounts {
    let mut out = BruteCounts { v, total: 0, words: vec![0; v], pairs: vec![0; v * v] };
    let mut set = Vec::new();
    for d in docs.iter().filter(|d| !d.is_empty()) {
        let windows: Vec<&[u32]> = if window == 0 || d.len() <= window { vec![&d[..]] } else { d.windows(window).collect() };
        for w in windows {
            out.total += 1;
            set.clear();
            set.extend_from_slice(w);
            set.sort_unstable();
            set.dedup();
            for (i, &a) in set.iter().enumerate() {
                out.words[a as usize] += 1;
                for &b in &set[i + 1..] {
                    out.pairs[a as usize * v + b as usize] += 1;
                }
            }
        }
    }
    out
}

/// Unfiltered vocabulary over `w0..w{v}` and the corpus encoded against it.
pub fn id_corpus(docs: &[Vec<u32>], v: usize) -> (Vocabulary, EncodedCorpus) {
    let terms: Vec<String> = (0..v).map(|i| format!("w{i:03}")).collect();
    let vocab = Vocabulary::from_parts(terms.clone(), vec![1; v], docs.len().max(1), 1, 1.0).unwrap();
    let tok: Vec<TokenizedDoc> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| TokenizedDoc { id: format!("d{i}"), tokens: d.iter().map(|&t| terms[t as usize].clone()).collect(), source_tokens: d.len() })
        .collect();
    let enc = encode_corpus(&tok, &vocab, 0);
    (vocab, enc)
}

/// NPMI from explicit probabilities, with the smoothing term on the joint only.
pub fn npmi_formula(total: u64, na: u64, nb: u64, nab: u64, eps: f64) -> f64 {
    if nab == total {
        return 1.0;
    }
    let t = total as f64;
    let pab = nab as f64 / t + eps;
    ((pab / ((na as f64 / t) * (nb as f64 / t))).ln() / -pab.ln()).clamp(-1.0, 1.0)
}
