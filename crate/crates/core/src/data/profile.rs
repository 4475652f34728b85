use serde::{Deserialize, Serialize};

/// How to read one family of traffic CSVs and where its label lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetProfile {
    pub name: String,
    #[serde(default = "yes")]
    pub has_header: bool,
    /// Column names for headerless files.
    #[serde(default)]
    pub column_names: Option<Vec<String>>,
    pub label_column: String,
    /// Label value (after grouping) that marks benign traffic.
    pub normal_label: String,
    #[serde(default)]
    pub drop_columns: Vec<String>,
    #[serde(default)]
    pub dedup: bool,
    /// Drop rows holding `inf`/`NaN` numeric cells.
    #[serde(default)]
    pub drop_non_finite: bool,
    /// Raw label -> category; labels missing from a non-empty map are an error.
    #[serde(default)]
    pub label_groups: Vec<(String, String)>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
}

fn yes() -> bool {
    true
}
fn default_top_k() -> usize {
    22
}
fn default_batch() -> usize {
    32
}
fn default_zeta() -> f64 {
    0.5
}

const NSL_KDD_COLUMNS: [&str; 43] = [
    "duration",
    "protocol_type",
    "service",
    "flag",
    "src_bytes",
    "dst_bytes",
    "land",
    "wrong_fragment",
    "urgent",
    "hot",
    "num_failed_logins",
    "logged_in",
    "num_compromised",
    "root_shell",
    "su_attempted",
    "num_root",
    "num_file_creations",
    "num_shells",
    "num_access_files",
    "num_outbound_cmds",
    "is_host_login",
    "is_guest_login",
    "count",
    "srv_count",
    "serror_rate",
    "srv_serror_rate",
    "rerror_rate",
    "srv_rerror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate",
    "dst_host_srv_serror_rate",
    "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
    "label",
    "difficulty",
];

const NSL_KDD_GROUPS: [(&str, &[&str]); 4] = [
    (
        "DoS",
        &[
            "apache2",
            "back",
            "land",
            "neptune",
            "mailbomb",
            "pod",
            "processtable",
            "smurf",
            "teardrop",
            "udpstorm",
            "worm",
        ],
    ),
    ("Probe", &["ipsweep", "mscan", "nmap", "portsweep", "saint", "satan"]),
    (
        "R2L",
        &[
            "ftp_write",
            "guess_passwd",
            "httptunnel",
            "imap",
            "multihop",
            "named",
            "phf",
            "sendmail",
            "snmpgetattack",
            "snmpguess",
            "spy",
            "warezclient",
            "warezmaster",
            "xlock",
            "xsnoop",
        ],
    ),
    (
        "U2R",
        &["buffer_overflow", "loadmodule", "perl", "ps", "rootkit", "sqlattack", "xterm"],
    ),
];

impl DatasetProfile {
    /// Headerless KDDTrain+/KDDTest+ files: 41 features, attack name, difficulty score.
    pub fn nsl_kdd() -> Self {
        let mut groups = vec![("normal".to_string(), "normal".to_string())];
        for (cat, names) in NSL_KDD_GROUPS {
            groups.extend(names.iter().map(|n| (n.to_string(), cat.to_string())));
        }
        Self {
            name: "nsl-kdd".into(),
            has_header: false,
            column_names: Some(NSL_KDD_COLUMNS.iter().map(|s| s.to_string()).collect()),
            label_column: "label".into(),
            normal_label: "normal".into(),
            drop_columns: vec!["difficulty".into()],
            dedup: false,
            drop_non_finite: false,
            label_groups: groups,
            top_k: 22,
            batch_size: 32,
            zeta: 0.5,
        }
    }

    /// UNSW_NB15 training/testing-set files, ten `attack_cat` classes.
    pub fn unsw_nb15() -> Self {
        Self {
            name: "unsw-nb15".into(),
            has_header: true,
            column_names: None,
            label_column: "attack_cat".into(),
            normal_label: "Normal".into(),
            drop_columns: vec!["id".into(), "label".into()],
            dedup: false,
            drop_non_finite: false,
            label_groups: Vec::new(),
            top_k: 27,
            batch_size: 512,
            zeta: 0.1,
        }
    }

    /// IoTID20 flows, five `Cat` classes; duplicates and infinite rows removed.
    pub fn iotid20() -> Self {
        Self {
            name: "iotid20".into(),
            has_header: true,
            column_names: None,
            label_column: "Cat".into(),
            normal_label: "Normal".into(),
            drop_columns: ["Flow_ID", "Src_IP", "Dst_IP", "Timestamp", "Label", "Sub_Cat"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            dedup: true,
            drop_non_finite: true,
            label_groups: Vec::new(),
            top_k: 40,
            batch_size: 128,
            zeta: 0.1,
        }
    }

    /// Profile used by the built-in Gaussian generator.
    pub fn synthetic() -> Self {
        Self {
            name: "synthetic".into(),
            has_header: true,
            column_names: None,
            label_column: "class".into(),
            normal_label: "normal".into(),
            drop_columns: Vec::new(),
            dedup: false,
            drop_non_finite: false,
            label_groups: Vec::new(),
            top_k: 22,
            batch_size: 32,
            zeta: 0.5,
        }
    }

    /// Headered CSV with a `label` column and `normal` benign value; meant to be
    /// overridden from the experiment config.
    pub fn generic() -> Self {
        Self {
            name: "generic".into(),
            label_column: "label".into(),
            ..Self::synthetic()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "nsl-kdd" => Some(Self::nsl_kdd()),
            "unsw-nb15" => Some(Self::unsw_nb15()),
            "iotid20" => Some(Self::iotid20()),
            "synthetic" => Some(Self::synthetic()),
            "generic" => Some(Self::generic()),
            _ => None,
        }
    }

    /// Maps a raw label cell to its category; `None` when a grouping table
    /// exists and does not know the label.
    pub fn group_label(&self, raw: &str) -> Option<String> {
        let raw = raw.trim().trim_end_matches('.');
        if self.label_groups.is_empty() {
            return Some(raw.to_string());
        }
        self.label_groups
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(raw))
            .map(|(_, v)| v.clone())
    }

    pub fn is_normal(&self, category: &str) -> bool {
        category.eq_ignore_ascii_case(&self.normal_label)
    }
}
