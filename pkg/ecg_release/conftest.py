import os

import pytest

PLAN_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "plans")

HEADER = (
    "Rhythm,Beat,PatientAge,Gender,VentricularRate,AtrialRate,QRSDuration,"
    "QTInterval,QTCorrected,RAxis,TAxis,QRSCount,QOnset,QOffset,TOffset"
)

SAMPLE_ROWS = [
    "AFIB,RBBB TWC,85,MALE,117,234,114,356,496,81,-27,19,208,265,386",
    "SB,TWC,59,FEMALE,52,52,92,432,401,76,42,8,215,261,431",
    "SA,NONE,20,FEMALE,67,67,82,382,403,88,20,11,224,265,415",
    "SB,NONE,66,MALE,53,53,96,456,427,34,3,9,219,267,447",
    "AF,STDD STTC,73,FEMALE,162,162,114,252,413,68,-40,26,228,285,354",
    "SB,NONE,46,FEMALE,57,57,70,404,393,38,24,9,225,260,427",
    "AFIB,TWC,80,FEMALE,98,86,74,360,459,69,83,17,215,252,395",
    "SR,NONE,46,MALE,63,63,90,376,384,24,38,11,221,266,409",
]


def write_table(path, rows, header=HEADER) -> str:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join([header] + list(rows)) + "\n")
    return str(path)


@pytest.fixture
def sample_csv(tmp_path):
    return write_table(tmp_path / "sample.csv", SAMPLE_ROWS)


@pytest.fixture
def study_plan_path():
    return os.path.join(PLAN_DIR, "arrhythmia_study.ini")
