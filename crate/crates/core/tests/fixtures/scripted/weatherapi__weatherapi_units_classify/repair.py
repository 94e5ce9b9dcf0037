def classify(temp_c):
    if temp_c < 0:
        return "freezing"
    if temp_c < 15:
        return "cold"
    if temp_c < 25:
        return "mild"
    return "hot"
