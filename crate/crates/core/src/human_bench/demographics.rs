use serde::{Deserialize, Serialize};

macro_rules! categorical {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }
    };
}

categorical!(Gender {
    Male => "male",
    Female => "female",
    Other => "other",
    PreferNotToSay => "prefer_not_to_say",
});

categorical!(AgeRange {
    Under18 => "under_18",
    From18To24 => "18-24",
    From25To34 => "25-34",
    From35To44 => "35-44",
    From45To54 => "45-54",
    From55To64 => "55-64",
    Over65 => "65+",
    PreferNotToSay => "prefer_not_to_say",
});

categorical!(
    /// European Qualifications Framework levels.
    Education {
        Eqf1To4 => "eqf_1_4",
        Eqf5 => "eqf_5",
        Eqf6 => "eqf_6",
        Eqf7 => "eqf_7",
        Eqf8 => "eqf_8",
        PreferNotToSay => "prefer_not_to_say",
    }
);

categorical!(CurrentEducation {
    Eqf1To4 => "eqf_1_4",
    Eqf5 => "eqf_5",
    Eqf6 => "eqf_6",
    Eqf7 => "eqf_7",
    Eqf8 => "eqf_8",
    NotStudying => "not_studying",
    PreferNotToSay => "prefer_not_to_say",
});

categorical!(AiFamiliarity {
    Very => "very_familiar",
    Somewhat => "somewhat_familiar",
    Slightly => "slightly_familiar",
    NotFamiliar => "not_familiar",
    PreferNotToSay => "prefer_not_to_say",
});

categorical!(PhotographyKnowledge {
    Professional => "professional",
    Advanced => "advanced",
    Intermediate => "intermediate",
    Basic => "basic",
    NoExperience => "no_experience",
    PreferNotToSay => "prefer_not_to_say",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: Gender,
    pub age_range: AgeRange,
    pub education: Education,
    pub current_education: CurrentEducation,
    pub ai_familiarity: AiFamiliarity,
    pub photography: PhotographyKnowledge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemographicFactor {
    Gender,
    AgeRange,
    Education,
    CurrentEducation,
    AiFamiliarity,
    Photography,
}

impl DemographicFactor {
    pub const ALL: [DemographicFactor; 6] = [
        DemographicFactor::Gender,
        DemographicFactor::AgeRange,
        DemographicFactor::Education,
        DemographicFactor::CurrentEducation,
        DemographicFactor::AiFamiliarity,
        DemographicFactor::Photography,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DemographicFactor::Gender => "gender",
            DemographicFactor::AgeRange => "age_range",
            DemographicFactor::Education => "education",
            DemographicFactor::CurrentEducation => "current_education",
            DemographicFactor::AiFamiliarity => "ai_familiarity",
            DemographicFactor::Photography => "photography",
        }
    }

    /// The participant's answer, with its position in the questionnaire
    /// order (used to order table rows).
    pub fn category(self, d: &Demographics) -> (usize, &'static str) {
        fn pos<T: PartialEq>(all: &[T], v: &T) -> usize {
            all.iter().position(|x| x == v).unwrap_or(usize::MAX)
        }
        match self {
            DemographicFactor::Gender => (pos(Gender::ALL, &d.gender), d.gender.as_str()),
            DemographicFactor::AgeRange => (pos(AgeRange::ALL, &d.age_range), d.age_range.as_str()),
            DemographicFactor::Education => (pos(Education::ALL, &d.education), d.education.as_str()),
            DemographicFactor::CurrentEducation => {
                (pos(CurrentEducation::ALL, &d.current_education), d.current_education.as_str())
            }
            DemographicFactor::AiFamiliarity => (pos(AiFamiliarity::ALL, &d.ai_familiarity), d.ai_familiarity.as_str()),
            DemographicFactor::Photography => (pos(PhotographyKnowledge::ALL, &d.photography), d.photography.as_str()),
        }
    }
}
